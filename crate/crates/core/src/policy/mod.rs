//! Two-stage attention feature extractor with per-individual actor heads and
//! a mean-pooled critic.
//!
//! Observation `D × N × 3` is embedded to 64 channels, mixed across solutions
//! (one attention batch per dimension), transposed, given sine/cosine
//! dimension positions, mixed across dimensions and mean-pooled over the
//! dimension axis. Each individual's 64 features are concatenated with a
//! 16-wide time embedding and fed to four actor heads and the critic.

mod network;
mod weights;

use serde::{Deserialize, Serialize};

pub use network::{attach, forward, Heads, LAYER_NORM_EPS, SIGMA_MAX, SIGMA_MIN};
pub use weights::{
    parameter_shapes, positional_table, PolicyWeights, CHECKPOINT_FORMAT, CROSSOVER_OPS,
    CROSSOVER_PARAMS, DECISION, EMBED, MUTATION_OPS, MUTATION_PARAMS, TIME_EMBED,
};

use crate::de::IndividualAction;
use crate::encoder::{EncoderConfig, Observation};
use crate::error::{Error, Result};
use crate::ndcore::{Array, Rng, Tape, Var, HALF_LN_2PI};

/// Network shape and ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub heads: usize,
    /// Rows of the positional table, i.e. the largest supported dimension.
    pub max_dim: usize,
    /// Replace both attention blocks by per-token linear layers.
    pub mlp_extractor: bool,
    pub encoder: EncoderConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            max_dim: 64,
            mlp_extractor: false,
            encoder: EncoderConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || EMBED % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide the embedding width {EMBED}",
                self.heads
            )));
        }
        if self.max_dim == 0 {
            return Err(Error::Config("positional table needs at least one row".into()));
        }
        if !(self.encoder.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.encoder.eta)));
        }
        Ok(())
    }
}

/// One individual's sampled action before parameter clamping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    /// 0-based mutation operator.
    pub mutation: usize,
    /// 0-based crossover operator.
    pub crossover: usize,
    pub mutation_raw: [f64; MUTATION_PARAMS],
    pub crossover_raw: [f64; CROSSOVER_PARAMS],
}

impl SampledAction {
    /// The DE configuration, parameters clamped to `[0, 1]`.
    pub fn to_action(&self) -> IndividualAction {
        IndividualAction::new(
            self.mutation + 1,
            self.crossover + 1,
            self.mutation_raw,
            self.crossover_raw,
        )
        .expect("head indices are in range")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub actions: Vec<SampledAction>,
    /// Per-individual sum of the four component log-probabilities.
    pub log_probs: Vec<f64>,
    /// Population value estimate.
    pub value: f64,
}

impl ActionSample {
    pub fn individual_actions(&self) -> Vec<IndividualAction> {
        self.actions.iter().map(SampledAction::to_action).collect()
    }

    /// Log-probability of the joint population action.
    pub fn joint_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Joint log-probability, joint entropy and value of one state-action pair.
#[derive(Clone, Copy, Debug)]
pub struct ScoredVars {
    pub log_prob: Var,
    /// `[N]` per-individual log-probabilities.
    pub individual_log_probs: Var,
    pub entropy: Var,
    pub value: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionEvaluation {
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

/// `e_xy`: `N × 64` landscape features.
pub fn extract_features(weights: &PolicyWeights, obs: &Observation) -> Result<Array> {
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, weights);
    let heads = forward(&mut tape, weights, &leaves, obs)?;
    Ok(tape.value(heads.features).clone())
}

/// Critic estimate of a state.
pub fn state_value(weights: &PolicyWeights, obs: &Observation) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, weights);
    let heads = forward(&mut tape, weights, &leaves, obs)?;
    Ok(tape.value(heads.value).data()[0])
}

fn rows(a: &Array) -> Vec<&[f64]> {
    a.data().chunks(a.last_dim()).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Samples (or greedily picks) an action for every individual.
///
/// Draw order per individual: mutation operator, crossover operator, three
/// mutation-parameter normals, two crossover-parameter normals.
pub fn act(
    weights: &PolicyWeights,
    obs: &Observation,
    rng: &mut Rng,
    mode: ActMode,
) -> Result<ActionSample> {
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, weights);
    let heads = forward(&mut tape, weights, &leaves, obs)?;
    let mlp = tape.value(heads.mutation_log_probs).clone();
    let clp = tape.value(heads.crossover_log_probs).clone();
    let (mmu, msd) = (tape.value(heads.mutation_mu), tape.value(heads.mutation_sigma));
    let (cmu, csd) = (tape.value(heads.crossover_mu), tape.value(heads.crossover_sigma));
    let (mmu, msd, cmu, csd) = (rows(mmu), rows(msd), rows(cmu), rows(csd));
    let mut actions = Vec::with_capacity(obs.size());
    let mut log_probs = Vec::with_capacity(obs.size());
    for (i, (ml, cl)) in rows(&mlp).into_iter().zip(rows(&clp)).enumerate() {
        let (mutation, crossover) = match mode {
            ActMode::Sample => {
                let mp: Vec<f64> = ml.iter().map(|l| l.exp()).collect();
                let cp: Vec<f64> = cl.iter().map(|l| l.exp()).collect();
                (rng.weighted_index(&mp), rng.weighted_index(&cp))
            }
            ActMode::Greedy => (argmax(ml), argmax(cl)),
        };
        let mut draw = |mu: f64, sd: f64| match mode {
            ActMode::Sample => mu + sd * rng.normal(),
            ActMode::Greedy => mu,
        };
        let mut mutation_raw = [0.0; MUTATION_PARAMS];
        for (k, slot) in mutation_raw.iter_mut().enumerate() {
            *slot = draw(mmu[i][k], msd[i][k]);
        }
        let mut crossover_raw = [0.0; CROSSOVER_PARAMS];
        for (k, slot) in crossover_raw.iter_mut().enumerate() {
            *slot = draw(cmu[i][k], csd[i][k]);
        }
        let mut lp = ml[mutation] + cl[crossover];
        for k in 0..MUTATION_PARAMS {
            lp += crate::ndcore::gaussian_log_density(mutation_raw[k], mmu[i][k], msd[i][k]);
        }
        for k in 0..CROSSOVER_PARAMS {
            lp += crate::ndcore::gaussian_log_density(crossover_raw[k], cmu[i][k], csd[i][k]);
        }
        actions.push(SampledAction {
            mutation,
            crossover,
            mutation_raw,
            crossover_raw,
        });
        log_probs.push(lp);
    }
    if log_probs.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("action log-probability".into()));
    }
    Ok(ActionSample {
        actions,
        log_probs,
        value: tape.value(heads.value).data()[0],
    })
}

/// Records log-probability, entropy and value of `actions` at `obs` on a
/// tape whose weight leaves are `leaves`.
pub fn score_on_tape(
    tape: &mut Tape,
    weights: &PolicyWeights,
    leaves: &[Var],
    obs: &Observation,
    actions: &[SampledAction],
) -> Result<ScoredVars> {
    let n = obs.size();
    if actions.len() != n {
        return Err(Error::Dimension(format!(
            "{} actions for a population of {n}",
            actions.len()
        )));
    }
    let heads = forward(tape, weights, leaves, obs)?;
    let midx: Vec<usize> = actions.iter().map(|a| a.mutation).collect();
    let cidx: Vec<usize> = actions.iter().map(|a| a.crossover).collect();
    let lm = tape.gather_last(heads.mutation_log_probs, &midx)?;
    let lc = tape.gather_last(heads.crossover_log_probs, &cidx)?;
    let mx = Array::new(
        vec![n, MUTATION_PARAMS],
        actions.iter().flat_map(|a| a.mutation_raw).collect(),
    )?;
    let cx = Array::new(
        vec![n, CROSSOVER_PARAMS],
        actions.iter().flat_map(|a| a.crossover_raw).collect(),
    )?;
    let gm = tape.gaussian_log_prob(&mx, heads.mutation_mu, heads.mutation_sigma)?;
    let gm = tape.sum_last(gm);
    let gc = tape.gaussian_log_prob(&cx, heads.crossover_mu, heads.crossover_sigma)?;
    let gc = tape.sum_last(gc);
    let s = tape.add(lm, lc)?;
    let s = tape.add(s, gm)?;
    let individual_log_probs = tape.add(s, gc)?;
    let log_prob = tape.sum(individual_log_probs);

    let em = categorical_entropy(tape, heads.mutation_log_probs)?;
    let ec = categorical_entropy(tape, heads.crossover_log_probs)?;
    let gm = gaussian_entropy(tape, heads.mutation_sigma);
    let gc = gaussian_entropy(tape, heads.crossover_sigma);
    let e = tape.add(em, ec)?;
    let e = tape.add(e, gm)?;
    let e = tape.add(e, gc)?;
    let entropy = tape.sum(e);

    Ok(ScoredVars {
        log_prob,
        individual_log_probs,
        entropy,
        value: heads.value,
    })
}

/// `[N]` entropies of the rows of a `[N, K]` log-probability table.
fn categorical_entropy(tape: &mut Tape, log_probs: Var) -> Result<Var> {
    let p = tape.exp(log_probs);
    let plogp = tape.mul(p, log_probs)?;
    let s = tape.sum_last(plogp);
    Ok(tape.scale(s, -1.0))
}

/// `[N]` entropies of diagonal Gaussians with `[N, K]` deviations.
fn gaussian_entropy(tape: &mut Tape, sigma: Var) -> Var {
    let k = tape.value(sigma).last_dim() as f64;
    let l = tape.log(sigma);
    let s = tape.sum_last(l);
    tape.offset(s, k * (0.5 + HALF_LN_2PI))
}

/// Recomputes log-probabilities, entropies and values for stored actions.
pub fn evaluate_actions(
    weights: &PolicyWeights,
    observations: &[Observation],
    actions: &[Vec<SampledAction>],
) -> Result<Vec<ActionEvaluation>> {
    if observations.len() != actions.len() {
        return Err(Error::Dimension(format!(
            "{} observations with {} action sets",
            observations.len(),
            actions.len()
        )));
    }
    observations
        .iter()
        .zip(actions)
        .map(|(obs, acts)| {
            let mut tape = Tape::new();
            let leaves = attach(&mut tape, weights);
            let s = score_on_tape(&mut tape, weights, &leaves, obs, acts)?;
            Ok(ActionEvaluation {
                log_prob: tape.value(s.log_prob).data()[0],
                entropy: tape.value(s.entropy).data()[0],
                value: tape.value(s.value).data()[0],
            })
        })
        .collect()
}
