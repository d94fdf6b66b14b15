//! Mutation and crossover operators.
//!
//! Random draws follow a fixed protocol so that a generation can be replayed
//! from a seed by independent code:
//!
//! 1. the pbest pick, when the operator uses one: `rng.index(top)` into the
//!    fitness-sorted population (stable sort, ties by index);
//! 2. plain donors in formula order, each by rejection: `rng.index(N)` until
//!    the index is not the target and not an earlier donor;
//! 3. archive donors: `rng.index(N + |archive|)` until the index is an archive
//!    entry or a population member other than the target and `r1`;
//! 4. ProDE donors: three `rng.weighted_index` draws over inverse distances,
//!    zeroing the target and earlier picks.
//!
//! Crossover draws come after the mutation draws of the same individual.

use serde::{Deserialize, Serialize};

use super::archive::Archives;
use super::PopulationState;
use crate::error::{Error, Result};
use crate::ndcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationOp {
    Rand1,
    Best1,
    Rand2,
    Best2,
    CurrentToRand1,
    CurrentToBest1,
    RandToBest1,
    CurrentToPBest1,
    CurrentToPBest1Archive,
    CurrentToRand1Archive,
    WeightedRandToPBest1,
    ProDeRand1,
    HardDeCurrentToPBest2,
    TopoDeRand1,
}

impl MutationOp {
    pub const ALL: [MutationOp; 14] = [
        MutationOp::Rand1,
        MutationOp::Best1,
        MutationOp::Rand2,
        MutationOp::Best2,
        MutationOp::CurrentToRand1,
        MutationOp::CurrentToBest1,
        MutationOp::RandToBest1,
        MutationOp::CurrentToPBest1,
        MutationOp::CurrentToPBest1Archive,
        MutationOp::CurrentToRand1Archive,
        MutationOp::WeightedRandToPBest1,
        MutationOp::ProDeRand1,
        MutationOp::HardDeCurrentToPBest2,
        MutationOp::TopoDeRand1,
    ];

    /// Operator for a 1-based index in `1..=14`.
    pub fn from_index(index: usize) -> Result<Self> {
        index
            .checked_sub(1)
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::Domain(format!("mutation operator {index} not in 1..=14")))
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|o| *o == self).unwrap() + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            MutationOp::Rand1 => "rand/1",
            MutationOp::Best1 => "best/1",
            MutationOp::Rand2 => "rand/2",
            MutationOp::Best2 => "best/2",
            MutationOp::CurrentToRand1 => "current-to-rand/1",
            MutationOp::CurrentToBest1 => "current-to-best/1",
            MutationOp::RandToBest1 => "rand-to-best/1",
            MutationOp::CurrentToPBest1 => "current-to-pbest/1",
            MutationOp::CurrentToPBest1Archive => "current-to-pbest/1+archive",
            MutationOp::CurrentToRand1Archive => "current-to-rand/1+archive",
            MutationOp::WeightedRandToPBest1 => "weighted-rand-to-pbest/1",
            MutationOp::ProDeRand1 => "ProDE-rand/1",
            MutationOp::HardDeCurrentToPBest2 => "HARDDE-current-to-pbest/2",
            MutationOp::TopoDeRand1 => "TopoDE-rand/1",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrossoverOp {
    Binomial,
    Exponential,
    PBinomial,
}

impl CrossoverOp {
    pub const ALL: [CrossoverOp; 3] = [
        CrossoverOp::Binomial,
        CrossoverOp::Exponential,
        CrossoverOp::PBinomial,
    ];

    pub fn from_index(index: usize) -> Result<Self> {
        index
            .checked_sub(1)
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::Domain(format!("crossover operator {index} not in 1..=3")))
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|o| *o == self).unwrap() + 1
    }
}

/// Read-only view of one generation's parents, shared by every trial.
pub struct Generation<'a> {
    pub pop: &'a PopulationState,
    pub arch: &'a Archives,
    /// Population indices sorted by ascending fitness.
    pub ranking: Vec<usize>,
}

impl<'a> Generation<'a> {
    pub fn new(pop: &'a PopulationState, arch: &'a Archives) -> Self {
        let mut ranking: Vec<usize> = (0..pop.size()).collect();
        ranking.sort_by(|&a, &b| pop.fitness[a].total_cmp(&pop.fitness[b]).then(a.cmp(&b)));
        Self { pop, arch, ranking }
    }

    fn n(&self) -> usize {
        self.pop.size()
    }

    fn x(&self, k: usize) -> &[f64] {
        &self.pop.positions[k]
    }

    fn best(&self) -> &[f64] {
        self.x(self.ranking[0])
    }

    /// Size of the pbest pool for fraction `p`.
    pub fn pbest_count(&self, p: f64) -> usize {
        ((p * self.n() as f64).round() as usize).clamp(1, self.n())
    }

    fn pbest(&self, p: f64, rng: &mut Rng) -> usize {
        self.ranking[rng.index(self.pbest_count(p))]
    }

    /// `count` pairwise distinct indices, excluding `target` and `taken` when
    /// the population is large enough.
    fn donors(&self, target: usize, taken: &[usize], count: usize, rng: &mut Rng) -> Vec<usize> {
        let n = self.n();
        let exclude_target = n - 1 >= taken.len() + count;
        let mut out: Vec<usize> = Vec::with_capacity(count);
        while out.len() < count {
            let r = rng.index(n);
            if (exclude_target && r == target) || taken.contains(&r) || out.contains(&r) {
                continue;
            }
            out.push(r);
        }
        debug_assert!(out.iter().all(|r| !taken.contains(r)));
        out
    }

    /// Member of population ∪ `archive`, distinct from `target` and `r1`.
    fn archive_donor<'b>(
        &'b self,
        archive: impl Fn(usize) -> &'b [f64],
        archive_len: usize,
        target: usize,
        r1: usize,
        rng: &mut Rng,
    ) -> &'b [f64] {
        let n = self.n();
        loop {
            let r = rng.index(n + archive_len);
            if r >= n {
                return archive(r - n);
            }
            if r != target && r != r1 {
                return self.x(r);
            }
        }
    }

    /// Fittest among the `max(2, N/10)` Euclidean-nearest neighbours of `target`.
    pub fn nearest_best(&self, target: usize) -> usize {
        let n = self.n();
        let xi = self.x(target);
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&k| k != target)
            .map(|k| (sq_dist(xi, self.x(k)), k))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let m = (n / 10).max(2).min(others.len());
        others[..m]
            .iter()
            .map(|&(_, k)| k)
            .min_by(|&a, &b| self.pop.fitness[a].total_cmp(&self.pop.fitness[b]).then(a.cmp(&b)))
            .expect("at least one neighbour")
    }

    /// Unnormalized ProDE selection weights `1 / (dist + 1e-12)`, zero at `target`.
    pub fn prode_weights(&self, target: usize) -> Vec<f64> {
        let xi = self.x(target);
        (0..self.n())
            .map(|k| {
                if k == target {
                    0.0
                } else {
                    1.0 / (sq_dist(xi, self.x(k)).sqrt() + 1e-12)
                }
            })
            .collect()
    }

    /// Donor vector for individual `i` (not bound-repaired).
    pub fn mutate(&self, i: usize, op: MutationOp, params: &[f64; 3], rng: &mut Rng) -> Vec<f64> {
        let [f, f2, p] = *params;
        let x = self.x(i);
        let d = x.len();
        let each = |g: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..d).map(g).collect() };
        match op {
            MutationOp::Rand1 => {
                let r = self.donors(i, &[], 3, rng);
                let (a, b, c) = (self.x(r[0]), self.x(r[1]), self.x(r[2]));
                each(&|j| a[j] + f * (b[j] - c[j]))
            }
            MutationOp::Best1 => {
                let r = self.donors(i, &[], 2, rng);
                let (best, a, b) = (self.best(), self.x(r[0]), self.x(r[1]));
                each(&|j| best[j] + f * (a[j] - b[j]))
            }
            MutationOp::Rand2 => {
                let r = self.donors(i, &[], 5, rng);
                let v: Vec<&[f64]> = r.iter().map(|&k| self.x(k)).collect();
                each(&|j| v[0][j] + f * (v[1][j] - v[2][j]) + f * (v[3][j] - v[4][j]))
            }
            MutationOp::Best2 => {
                let r = self.donors(i, &[], 4, rng);
                let best = self.best();
                let v: Vec<&[f64]> = r.iter().map(|&k| self.x(k)).collect();
                each(&|j| best[j] + f * (v[0][j] - v[1][j]) + f * (v[2][j] - v[3][j]))
            }
            MutationOp::CurrentToRand1 => {
                let r = self.donors(i, &[], 3, rng);
                let v: Vec<&[f64]> = r.iter().map(|&k| self.x(k)).collect();
                each(&|j| x[j] + f * (v[0][j] - x[j]) + f * (v[1][j] - v[2][j]))
            }
            MutationOp::CurrentToBest1 => {
                let r = self.donors(i, &[], 2, rng);
                let (best, a, b) = (self.best(), self.x(r[0]), self.x(r[1]));
                each(&|j| x[j] + f * (best[j] - x[j]) + f * (a[j] - b[j]))
            }
            MutationOp::RandToBest1 => {
                let r = self.donors(i, &[], 4, rng);
                let best = self.best();
                let v: Vec<&[f64]> = r.iter().map(|&k| self.x(k)).collect();
                each(&|j| v[0][j] + f * (best[j] - v[1][j]) + f * (v[2][j] - v[3][j]))
            }
            MutationOp::CurrentToPBest1 => {
                let pb = self.x(self.pbest(p, rng));
                let r = self.donors(i, &[], 2, rng);
                let (a, b) = (self.x(r[0]), self.x(r[1]));
                each(&|j| x[j] + f * (pb[j] - x[j]) + f * (a[j] - b[j]))
            }
            MutationOp::CurrentToPBest1Archive => {
                let pb = self.x(self.pbest(p, rng));
                let r1 = self.donors(i, &[], 1, rng)[0];
                let union = self.arch.union();
                let xt = self.archive_donor(|k| &union[k], union.len(), i, r1, rng);
                let a = self.x(r1);
                each(&|j| x[j] + f * (pb[j] - x[j]) + f * (a[j] - xt[j]))
            }
            MutationOp::CurrentToRand1Archive => {
                let r1 = self.donors(i, &[], 1, rng)[0];
                let union = self.arch.union();
                let xt = self.archive_donor(|k| &union[k], union.len(), i, r1, rng);
                let a = self.x(r1);
                each(&|j| x[j] + f * (a[j] - xt[j]))
            }
            MutationOp::WeightedRandToPBest1 => {
                let pb = self.x(self.pbest(p, rng));
                let r = self.donors(i, &[], 2, rng);
                let (a, b) = (self.x(r[0]), self.x(r[1]));
                each(&|j| f * a[j] + f * f2 * (pb[j] - b[j]))
            }
            MutationOp::ProDeRand1 => {
                let mut w = self.prode_weights(i);
                let mut picks = [0usize; 3];
                for slot in &mut picks {
                    let k = rng.weighted_index(&w);
                    *slot = k;
                    w[k] = 0.0;
                }
                let (a, b, c) = (self.x(picks[0]), self.x(picks[1]), self.x(picks[2]));
                each(&|j| a[j] + f * (b[j] - c[j]))
            }
            MutationOp::HardDeCurrentToPBest2 => {
                let pb = self.x(self.pbest(p, rng));
                let r1 = self.donors(i, &[], 1, rng)[0];
                let recent = self.arch.recent();
                let x2 = self.archive_donor(|k| &recent[k], recent.len(), i, r1, rng);
                let former = self.arch.former();
                let x3 = self.archive_donor(|k| &former[k], former.len(), i, r1, rng);
                let a = self.x(r1);
                each(&|j| x[j] + f * (pb[j] - x[j]) + f2 * (a[j] - x2[j]) + f2 * (a[j] - x3[j]))
            }
            MutationOp::TopoDeRand1 => {
                let nbi = self.nearest_best(i);
                let nb = self.x(nbi);
                let r = self.donors(i, &[nbi], 2, rng);
                let (a, b) = (self.x(r[0]), self.x(r[1]));
                each(&|j| nb[j] + f * (a[j] - b[j]))
            }
        }
    }

    /// Trial vector mixing `donor` into the parent (or a pbest member).
    pub fn crossover(
        &self,
        i: usize,
        donor: &[f64],
        op: CrossoverOp,
        params: &[f64; 2],
        rng: &mut Rng,
    ) -> Vec<f64> {
        let [cr, p] = *params;
        let d = donor.len();
        match op {
            CrossoverOp::Binomial => binomial(self.x(i), donor, cr, rng),
            CrossoverOp::PBinomial => {
                let base = self.x(self.pbest(p, rng));
                binomial(base, donor, cr, rng)
            }
            CrossoverOp::Exponential => {
                let mut v = self.x(i).to_vec();
                let start = rng.index(d);
                let len = exponential_length(d, cr, rng);
                for k in 0..len {
                    let j = (start + k) % d;
                    v[j] = donor[j];
                }
                v
            }
        }
    }
}

fn binomial(base: &[f64], donor: &[f64], cr: f64, rng: &mut Rng) -> Vec<f64> {
    let jrand = rng.index(donor.len());
    base.iter()
        .zip(donor)
        .enumerate()
        .map(|(j, (b, u))| {
            let take = rng.uniform() < cr;
            if take || j == jrand {
                *u
            } else {
                *b
            }
        })
        .collect()
}

/// Segment length of exponential crossover: starts at 1 and grows while
/// `L < D` and a fresh uniform draw is below `cr`.
pub fn exponential_length(d: usize, cr: f64, rng: &mut Rng) -> usize {
    let mut len = 1;
    while len < d && rng.uniform() < cr {
        len += 1;
    }
    len
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Midpoint-to-bound repair: a coordinate outside `[lower, upper]` moves
/// halfway from the parent to the violated bound.
pub fn repair_bounds(v: &mut [f64], parent: &[f64], lower: &[f64], upper: &[f64]) {
    for j in 0..v.len() {
        if v[j] > upper[j] {
            v[j] = (parent[j] + upper[j]) / 2.0;
        } else if v[j] < lower[j] {
            v[j] = (parent[j] + lower[j]) / 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pop(points: Vec<Vec<f64>>, fitness: Vec<f64>) -> PopulationState {
        let n = points.len();
        let d = points[0].len();
        PopulationState {
            best_value: fitness.iter().copied().fold(f64::INFINITY, f64::min),
            best_position: points[0].clone(),
            initial_best: 0.0,
            positions: points,
            fitness,
            generation: 0,
            evaluations: n,
            budget: 1000,
            lower: vec![-5.0; d],
            upper: vec![5.0; d],
        }
    }

    #[test]
    fn operator_indices_round_trip() {
        for k in 1..=14 {
            assert_eq!(MutationOp::from_index(k).unwrap().index(), k);
        }
        for k in 1..=3 {
            assert_eq!(CrossoverOp::from_index(k).unwrap().index(), k);
        }
        assert!(matches!(MutationOp::from_index(0), Err(Error::Domain(_))));
        assert!(matches!(MutationOp::from_index(15), Err(Error::Domain(_))));
        assert!(CrossoverOp::from_index(4).is_err());
    }

    #[test]
    fn best1_with_zero_f_returns_best() {
        let pop = tiny_pop(
            (0..6).map(|k| vec![k as f64, -(k as f64)]).collect(),
            vec![5.0, 4.0, 0.5, 3.0, 2.0, 1.0],
        );
        let arch = Archives::new(6);
        let g = Generation::new(&pop, &arch);
        let mut rng = Rng::new(1);
        let u = g.mutate(0, MutationOp::Best1, &[0.0, 0.0, 0.0], &mut rng);
        assert_eq!(u, vec![2.0, -2.0]);
    }

    #[test]
    fn binomial_extremes() {
        let pop = tiny_pop(vec![vec![0.0; 6]; 5], vec![1.0; 5]);
        let arch = Archives::new(5);
        let g = Generation::new(&pop, &arch);
        let donor = vec![1.0; 6];
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let v = g.crossover(0, &donor, CrossoverOp::Binomial, &[1.0, 0.0], &mut rng);
            assert_eq!(v, donor);
            let v = g.crossover(0, &donor, CrossoverOp::Binomial, &[0.0, 0.0], &mut rng);
            assert_eq!(v.iter().filter(|x| **x == 1.0).count(), 1);
        }
    }

    #[test]
    fn repair_examples() {
        let mut v = vec![7.0, 1.0, -12.0];
        repair_bounds(&mut v, &[3.0, 0.0, -5.0], &[-5.0; 3], &[5.0; 3]);
        assert_eq!(v, vec![4.0, 1.0, -5.0]);
    }

    #[test]
    fn pbest_count_floor_is_one() {
        let pop = tiny_pop(vec![vec![0.0]; 10], vec![0.0; 10]);
        let arch = Archives::new(10);
        let g = Generation::new(&pop, &arch);
        assert_eq!(g.pbest_count(0.0), 1);
        assert_eq!(g.pbest_count(0.26), 3);
        assert_eq!(g.pbest_count(1.0), 10);
    }
}
