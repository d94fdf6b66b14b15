//! Observation builder: box-normalized coordinates, mantissa-exponent fitness
//! tuples and the normalized time stamp.

use serde::{Deserialize, Serialize};

use crate::de::PopulationState;
use crate::error::{Error, Result};
use crate::ndcore::Array;

pub const DEFAULT_ETA: f64 = 10.0;

/// How fitness values and time enter the observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Exponent scale `η`.
    pub eta: f64,
    /// Replace mantissa-exponent tuples by a duplicated min-max value.
    pub minmax_fitness: bool,
    /// Drop the time stamp.
    pub no_time: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            minmax_fitness: false,
            no_time: false,
        }
    }
}

/// Policy input for one generation.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `D × N × 3` tuples `(x', ϖ, ε)`.
    pub tuples: Array,
    /// `t / T`, absent when the time feature is disabled.
    pub time: Option<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.tuples.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.tuples.shape()[1]
    }
}

/// Normalized scientific form `y = ϖ·10^e` with `|ϖ| ∈ [0.1, 1)`; zero maps to `(0, 0)`.
pub fn mantissa_decimal_exponent(y: f64) -> Result<(f64, i32)> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("cannot encode non-finite value {y}")));
    }
    if y == 0.0 {
        return Ok((0.0, 0));
    }
    let mut e = y.abs().log10().floor() as i32 + 1;
    let mut m = shift_decimal(y, e);
    if m.abs() < 0.1 {
        e -= 1;
        m = shift_decimal(y, e);
    }
    // mantissas a few ulps short of 1 (decimal powers that are not exact
    // doubles) move to the next decade
    if m.abs() >= 1.0 - 4.0 * f64::EPSILON {
        e += 1;
        m = shift_decimal(y, e);
    }
    if m.abs() < 0.1 {
        m = 0.1f64.copysign(m);
    }
    Ok((m, e))
}

fn shift_decimal(y: f64, e: i32) -> f64 {
    if e >= 0 {
        y / 10f64.powi(e)
    } else {
        y * 10f64.powi(-e)
    }
}

/// `(ϖ, ε)` with `ε = e / η`.
pub fn mantissa_exponent(y: f64, eta: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("exponent scale must be positive, got {eta}")));
    }
    let (m, e) = mantissa_decimal_exponent(y)?;
    Ok((m, e as f64 / eta))
}

/// Builds the observation from raw positions and fitness.
pub fn encode_parts(
    positions: &[Vec<f64>],
    fitness: &[f64],
    lower: &[f64],
    upper: &[f64],
    t: usize,
    horizon: usize,
    config: &EncoderConfig,
) -> Result<Observation> {
    if t > horizon {
        return Err(Error::Usage(format!("generation {t} is past the horizon {horizon}")));
    }
    let n = positions.len();
    if n == 0 || fitness.len() != n {
        return Err(Error::Dimension(format!(
            "{n} positions with {} fitness values",
            fitness.len()
        )));
    }
    let d = lower.len();
    if upper.len() != d || positions.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension("position rows must match the bound length".into()));
    }
    let fit_pairs: Vec<(f64, f64)> = if config.minmax_fitness {
        let lo = fitness.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain("non-finite fitness".into()));
        }
        let span = hi - lo;
        fitness
            .iter()
            .map(|y| {
                let v = if span > 0.0 { (y - lo) / span } else { 0.0 };
                (v, v)
            })
            .collect()
    } else {
        fitness
            .iter()
            .map(|y| mantissa_exponent(*y, config.eta))
            .collect::<Result<_>>()?
    };
    let mut data = Vec::with_capacity(d * n * 3);
    for j in 0..d {
        let width = upper[j] - lower[j];
        for (x, (a, b)) in positions.iter().zip(&fit_pairs) {
            data.extend_from_slice(&[x[j] / width, *a, *b]);
        }
    }
    let tuples = Array::new(vec![d, n, 3], data)?;
    if !tuples.is_finite() {
        return Err(Error::NonFinite("observation".into()));
    }
    let time = if config.no_time {
        None
    } else if horizon == 0 {
        Some(1.0)
    } else {
        Some(t as f64 / horizon as f64)
    };
    Ok(Observation { tuples, time })
}

/// Observation of a population at generation `t` of `horizon`.
pub fn encode(
    pop: &PopulationState,
    t: usize,
    horizon: usize,
    config: &EncoderConfig,
) -> Result<Observation> {
    encode_parts(
        &pop.positions,
        &pop.fitness,
        &pop.lower,
        &pop.upper,
        t,
        horizon,
        config,
    )
}
