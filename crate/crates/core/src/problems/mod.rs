//! The synthetic benchmark suite and the problem plug-in contract.

pub mod bbob;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Rng;
pub use bbob::GallagherPeaks;

/// Function ids used for training; the remaining 16 form the test set.
pub const TRAIN_IDS: [usize; 8] = [1, 2, 3, 5, 15, 16, 17, 21];

pub const DEFAULT_LOWER: f64 = -5.0;
pub const DEFAULT_UPPER: f64 = 5.0;

/// Anything the harness can optimize.
pub trait Problem: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn evaluate(&self, x: &[f64]) -> f64;
    /// Known optimal objective value, when one exists.
    fn optimum_value(&self) -> Option<f64>;

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.dim();
        xs.iter()
            .map(|x| {
                if x.len() != d {
                    Err(Error::Dimension(format!(
                        "{}: expected {d} coordinates, got {}",
                        self.name(),
                        x.len()
                    )))
                } else {
                    Ok(self.evaluate(x))
                }
            })
            .collect()
    }
}

/// Named collection of problem providers.
#[derive(Default, Clone)]
pub struct ProblemRegistry {
    entries: BTreeMap<String, Arc<dyn Problem>>,
}

impl ProblemRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, problem: Arc<dyn Problem>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("problem '{name}' already registered")));
        }
        self.entries.insert(name, problem);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Problem>> {
        self.entries.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// One seeded instance of a synthetic function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub fid: usize,
    pub dim: usize,
    pub seed: u64,
    pub x_opt: Vec<f64>,
    /// Row-major `dim × dim` orthogonal matrix.
    pub rotation: Vec<f64>,
    pub f_opt: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(skip)]
    pub peaks: Option<GallagherPeaks>,
}

/// Orthogonal matrix from the QR decomposition of a seeded Gaussian matrix,
/// with the sign convention that makes the triangular factor's diagonal positive.
pub fn random_rotation(d: usize, rng: &mut Rng) -> Vec<f64> {
    // columns of A, orthonormalized in order (modified Gram-Schmidt, run twice)
    let mut cols: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    for j in 0..d {
        for _ in 0..2 {
            for k in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let ck = cols[k].clone();
                for (a, b) in cols[j].iter_mut().zip(&ck) {
                    *a -= proj * b;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut q = vec![0.0; d * d];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            q[i * d + j] = *v;
        }
    }
    q
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn random_signs(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect()
}

fn gallagher_peaks(
    x_opt: &[f64],
    count: usize,
    alpha_first: f64,
    spread: f64,
    rng: &mut Rng,
) -> GallagherPeaks {
    let d = x_opt.len();
    let others = count - 1;
    let mut alphas: Vec<f64> = (0..others)
        .map(|j| 1000f64.powf(2.0 * j as f64 / (others - 1) as f64))
        .collect();
    rng.shuffle(&mut alphas);
    alphas.insert(0, alpha_first);
    let mut centers = vec![x_opt.to_vec()];
    let mut weights = vec![10.0];
    for i in 1..count {
        centers.push((0..d).map(|_| rng.uniform_in(-spread, spread)).collect());
        weights.push(1.1 + 8.0 * (i - 1) as f64 / (others - 1) as f64);
    }
    let scales = alphas
        .iter()
        .map(|&a| {
            let mut s: Vec<f64> = (0..d).map(|i| bbob::lambda(a, d, i) / a.powf(0.25)).collect();
            rng.shuffle(&mut s);
            s
        })
        .collect();
    GallagherPeaks {
        centers,
        weights,
        scales,
    }
}

/// Builds the deterministic instance `(fid, dim, seed)` with `f_opt = 0`.
pub fn make_instance(fid: usize, dim: usize, seed: u64) -> Result<ProblemInstance> {
    make_instance_with_offset(fid, dim, seed, 0.0)
}

pub fn make_instance_with_offset(
    fid: usize,
    dim: usize,
    seed: u64,
    f_opt: f64,
) -> Result<ProblemInstance> {
    if !(1..=24).contains(&fid) {
        return Err(Error::Domain(format!("unknown function id {fid}")));
    }
    if dim < 2 {
        return Err(Error::Domain(format!("dimension must be at least 2, got {dim}")));
    }
    let mut rng = Rng::with_stream(seed, fid as u64);
    let x_opt: Vec<f64> = match fid {
        5 => random_signs(dim, &mut rng).iter().map(|s| 5.0 * s).collect(),
        20 => random_signs(dim, &mut rng)
            .iter()
            .map(|s| bbob::SCHWEFEL_XOPT * s)
            .collect(),
        24 => random_signs(dim, &mut rng).iter().map(|s| 1.25 * s).collect(),
        _ => (0..dim).map(|_| rng.uniform_in(-4.0, 4.0)).collect(),
    };
    let rotation = if bbob::UNROTATED.contains(&fid) {
        identity(dim)
    } else {
        random_rotation(dim, &mut rng)
    };
    let peaks = match fid {
        21 => Some(gallagher_peaks(&x_opt, 101, 1000.0, 5.0, &mut rng)),
        22 => Some(gallagher_peaks(&x_opt, 21, 1e6, 4.9, &mut rng)),
        _ => None,
    };
    Ok(ProblemInstance {
        fid,
        dim,
        seed,
        x_opt,
        rotation,
        f_opt,
        lower: vec![DEFAULT_LOWER; dim],
        upper: vec![DEFAULT_UPPER; dim],
        peaks,
    })
}

impl ProblemInstance {
    /// Objective value of one point.
    pub fn value(&self, x: &[f64]) -> f64 {
        bbob::core(self, x) + self.f_opt
    }

    /// Objective values of the rows of `xs`.
    pub fn evaluate(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Problem::evaluate_batch(self, xs)
    }

    /// Planted optimum `(x_opt, f_opt)`.
    pub fn optimum(&self) -> (&[f64], f64) {
        (&self.x_opt, self.f_opt)
    }
}

impl Problem for ProblemInstance {
    fn name(&self) -> String {
        format!("f{}-d{}-s{}", self.fid, self.dim, self.seed)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lower(&self) -> &[f64] {
        &self.lower
    }
    fn upper(&self) -> &[f64] {
        &self.upper
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.value(x)
    }
    fn optimum_value(&self) -> Option<f64> {
        Some(self.f_opt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetRole {
    Train,
    Test,
}

#[derive(Clone, Debug)]
pub struct ProblemSet {
    pub role: SetRole,
    pub instances: Vec<ProblemInstance>,
}

impl ProblemSet {
    pub fn ids(&self) -> Vec<usize> {
        self.instances.iter().map(|p| p.fid).collect()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instances for an explicit list of function ids.
    pub fn from_ids(role: SetRole, ids: &[usize], dim: usize, seed: u64) -> Result<Self> {
        let instances = ids
            .iter()
            .map(|&fid| make_instance(fid, dim, seed))
            .collect::<Result<_>>()?;
        Ok(Self { role, instances })
    }
}

/// The fixed 8/16 train/test split.
pub fn split(dim: usize, seed: u64) -> Result<(ProblemSet, ProblemSet)> {
    let test_ids: Vec<usize> = (1..=24).filter(|id| !TRAIN_IDS.contains(id)).collect();
    Ok((
        ProblemSet::from_ids(SetRole::Train, &TRAIN_IDS, dim, seed)?,
        ProblemSet::from_ids(SetRole::Test, &test_ids, dim, seed)?,
    ))
}
