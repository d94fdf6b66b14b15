//! n-step PPO over the DE environment.

mod env;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use env::{reward, DeEnv, EnvStep, REWARD_GUARD};

use crate::encoder::Observation;
use crate::error::{Error, Result};
use crate::ndcore::{AdamConfig, AdamState, Rng, Tape};
use crate::policy::{act, attach, score_on_tape, state_value, ActMode, PolicyConfig, PolicyWeights, SampledAction};
use crate::problems::Problem;

/// Limit on `|log ρ|` before exponentiation; far outside the clip range.
pub const LOG_RATIO_LIMIT: f64 = 20.0;

/// How advantages are estimated from a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageEstimator {
    /// Bootstrapped n-step return minus the value estimate.
    NStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Generations per rollout.
    pub n_steps: usize,
    /// PPO passes per rollout.
    pub kappa: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub population: usize,
    pub max_fe: usize,
    pub horizon: usize,
    pub seed: u64,
    pub normalize_advantages: bool,
    pub advantage: AdvantageEstimator,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub policy: PolicyConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            n_steps: 10,
            kappa: 3,
            gamma: 0.99,
            learning_rate: 1e-3,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            population: 100,
            max_fe: 20_000,
            horizon: 200,
            seed: 0,
            normalize_advantages: true,
            advantage: AdvantageEstimator::NStep,
            checkpoint_every: 10,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.kappa == 0 || self.horizon == 0 {
            return Err(Error::Config("n_steps, kappa and horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("clip and learning rate must be positive".into()));
        }
        if self.horizon * self.population != self.max_fe {
            return Err(Error::Config(format!(
                "horizon {} × population {} must equal max_fe {}",
                self.horizon, self.population, self.max_fe
            )));
        }
        self.policy.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub actions: Vec<SampledAction>,
    /// Joint log-probability under the behaviour policy.
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Critic value of the state after the last transition, 0 when terminal.
    pub bootstrap: f64,
}

/// Up to `n` generations driven by the sampling policy.
pub fn rollout(weights: &PolicyWeights, env: &mut DeEnv, n: usize, rng: &mut Rng) -> Result<Rollout> {
    if env.done() {
        return Err(Error::Terminal("rollout on a finished episode".into()));
    }
    let mut transitions = Vec::with_capacity(n);
    while transitions.len() < n && !env.done() {
        let observation = env.observe()?;
        let sample = act(weights, &observation, rng, ActMode::Sample)?;
        let step = env.step(&sample.individual_actions())?;
        let reward = step
            .reward
            .ok_or_else(|| Error::Config("training needs problems with a known optimum".into()))?;
        transitions.push(Transition {
            log_prob: sample.joint_log_prob(),
            value: sample.value,
            actions: sample.actions,
            observation,
            reward,
            done: step.done,
        });
    }
    let bootstrap = if env.done() {
        0.0
    } else {
        state_value(weights, &env.observe()?)?
    };
    Ok(Rollout {
        transitions,
        bootstrap,
    })
}

/// Discounted n-step returns `G_t = r_t + γ G_{t+1}` seeded with `bootstrap`,
/// and advantages `G_t - V(s_t)`, standardized when `normalize` and the batch
/// holds more than one step.
pub fn returns_and_advantages(
    transitions: &[Transition],
    bootstrap: f64,
    gamma: f64,
    normalize: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut returns = vec![0.0; transitions.len()];
    let mut g = bootstrap;
    for (t, tr) in transitions.iter().enumerate().rev() {
        if tr.done {
            g = 0.0;
        }
        g = tr.reward + gamma * g;
        returns[t] = g;
    }
    let mut adv: Vec<f64> = returns.iter().zip(transitions).map(|(g, tr)| g - tr.value).collect();
    if normalize && adv.len() > 1 {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let sd = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
    }
    (returns, adv)
}

/// Diagnostics of one PPO pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    /// `max |ρ - 1|` over the batch, before this pass's parameter change.
    pub max_ratio_deviation: f64,
    pub grad_norm: f64,
}

/// Loss hyperparameters of the clipped surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoLoss {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&TrainerConfig> for PpoLoss {
    fn from(c: &TrainerConfig) -> Self {
        Self {
            clip: c.clip,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

/// Records the PPO loss for a batch on a fresh tape. Returns the tape, the
/// weight leaves, the loss node and pass diagnostics (without gradient norm).
pub fn ppo_loss(
    weights: &PolicyWeights,
    batch: &[Transition],
    returns: &[f64],
    advantages: &[f64],
    loss: PpoLoss,
) -> Result<(Tape, Vec<crate::ndcore::Var>, crate::ndcore::Var, PassStats)> {
    if batch.is_empty() || returns.len() != batch.len() || advantages.len() != batch.len() {
        return Err(Error::Usage("PPO batch, returns and advantages must be non-empty and aligned".into()));
    }
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, weights);
    let m = batch.len() as f64;
    let mut terms = Vec::with_capacity(batch.len());
    let mut max_dev: f64 = 0.0;
    let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
    for ((tr, g), a) in batch.iter().zip(returns).zip(advantages) {
        let s = score_on_tape(&mut tape, weights, &leaves, &tr.observation, &tr.actions)?;
        let log_ratio = tape.offset(s.log_prob, -tr.log_prob);
        let log_ratio = tape.clamp(log_ratio, -LOG_RATIO_LIMIT, LOG_RATIO_LIMIT);
        let ratio = tape.exp(log_ratio);
        let rho = tape.value(ratio).data()[0];
        max_dev = max_dev.max((rho - 1.0).abs());
        let unclipped = tape.scale(ratio, *a);
        let clipped = tape.clamp(ratio, 1.0 - loss.clip, 1.0 + loss.clip);
        let clipped = tape.scale(clipped, *a);
        let surrogate = tape.minimum(unclipped, clipped)?;
        let err = tape.offset(s.value, -g);
        let sq = tape.square(err);
        pl -= tape.value(surrogate).data()[0] / m;
        vl += tape.value(sq).data()[0] / m;
        ent += tape.value(s.entropy).data()[0] / m;
        // per-sample contribution: -surrogate + c_v·err² - c_e·entropy
        let p = tape.scale(surrogate, -1.0 / m);
        let v = tape.scale(sq, loss.value_coef / m);
        let e = tape.scale(s.entropy, -loss.entropy_coef / m);
        let t = tape.add(p, v)?;
        terms.push(tape.add(t, e)?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    let total_loss = tape.value(total).data()[0];
    let stats = PassStats {
        policy_loss: pl,
        value_loss: vl,
        entropy: ent,
        total_loss,
        max_ratio_deviation: max_dev,
        grad_norm: 0.0,
    };
    if !total_loss.is_finite() {
        return Err(Error::NonFinite(format!("PPO loss: {stats:?}")));
    }
    Ok((tape, leaves, total, stats))
}

/// `kappa` clipped-surrogate passes, one Adam step each.
pub fn ppo_update(
    weights: &mut PolicyWeights,
    adam: &mut AdamState,
    batch: &[Transition],
    returns: &[f64],
    advantages: &[f64],
    kappa: usize,
    loss: PpoLoss,
) -> Result<Vec<PassStats>> {
    let mut out = Vec::with_capacity(kappa);
    for _ in 0..kappa {
        let (tape, leaves, total, mut stats) = ppo_loss(weights, batch, returns, advantages, loss)?;
        let grads = tape.backward(total)?;
        let grads: Vec<_> = leaves.iter().map(|v| grads.get(*v)).collect();
        let norm = grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("PPO gradient: {stats:?}")));
        }
        stats.grad_norm = norm;
        let mut params: Vec<&mut _> = weights.arrays_mut().iter_mut().collect();
        adam.step(&mut params, &grads)?;
        out.push(stats);
    }
    Ok(out)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub problem: String,
    pub accumulated_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub updates: usize,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str =
    "epoch,problem,accumulated_reward,policy_loss,value_loss,entropy,updates,wall_seconds";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.problem,
            self.accumulated_reward,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.updates,
            self.wall_seconds
        )
    }
}

/// Where training writes its outputs; both optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub log_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct TrainResult {
    pub weights: PolicyWeights,
    pub log: Vec<LogRow>,
    /// Every pass of every update, in order.
    pub passes: Vec<PassStats>,
}

/// Seed of the DE run for (`epoch`, problem `index`).
pub fn episode_seed(base: u64, epoch: usize, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 20 | index as u64)
}

/// Single episode with updates every `n_steps` generations. Returns the
/// accumulated reward and the pass statistics.
pub fn train_episode(
    config: &TrainerConfig,
    weights: &mut PolicyWeights,
    adam: &mut AdamState,
    problem: Arc<dyn Problem>,
    env_seed: u64,
    rng: &mut Rng,
) -> Result<(f64, Vec<PassStats>)> {
    let mut env = DeEnv::new(
        problem,
        config.population,
        config.max_fe,
        config.horizon,
        config.policy.encoder,
        env_seed,
    )?;
    let mut accumulated = 0.0;
    let mut passes = Vec::new();
    while !env.done() {
        let ro = rollout(weights, &mut env, config.n_steps, rng)?;
        accumulated += ro.transitions.iter().map(|t| t.reward).sum::<f64>();
        let (returns, adv) =
            returns_and_advantages(&ro.transitions, ro.bootstrap, config.gamma, config.normalize_advantages);
        passes.extend(ppo_update(
            weights,
            adam,
            &ro.transitions,
            &returns,
            &adv,
            config.kappa,
            config.into(),
        )?);
    }
    Ok((accumulated, passes))
}

/// Training loop: every epoch visits every problem once in the given order.
pub fn train(
    config: &TrainerConfig,
    problems: &[Arc<dyn Problem>],
    initial: Option<PolicyWeights>,
    outputs: &TrainOutputs,
) -> Result<TrainResult> {
    config.validate()?;
    if problems.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut weights = match initial {
        Some(w) => w,
        None => PolicyWeights::init(config.policy, config.seed)?,
    };
    let mut adam = {
        let params: Vec<&_> = weights.arrays().iter().collect();
        AdamState::new(config.adam(), &params)
    };
    let mut rng = Rng::with_stream(config.seed, 1);
    let mut log_file = match &outputs.log_path {
        Some(p) => {
            let mut f = std::fs::File::create(p)?;
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    if let Some(dir) = &outputs.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = Vec::new();
    let mut all_passes = Vec::new();
    for epoch in 0..config.epochs {
        for (index, problem) in problems.iter().enumerate() {
            let start = Instant::now();
            let seed = episode_seed(config.seed, epoch, index);
            let (acc, passes) =
                train_episode(config, &mut weights, &mut adam, problem.clone(), seed, &mut rng)?;
            let k = passes.len().max(1) as f64;
            let row = LogRow {
                epoch,
                problem: problem.name(),
                accumulated_reward: acc,
                policy_loss: passes.iter().map(|p| p.policy_loss).sum::<f64>() / k,
                value_loss: passes.iter().map(|p| p.value_loss).sum::<f64>() / k,
                entropy: passes.iter().map(|p| p.entropy).sum::<f64>() / k,
                updates: passes.len() / config.kappa,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.csv())?;
                f.flush()?;
            }
            log.push(row);
            all_passes.extend(passes);
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            let periodic = config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0;
            if periodic {
                weights.save(&dir.join(format!("epoch-{:04}.json", epoch + 1)))?;
            }
        }
    }
    if let Some(dir) = &outputs.checkpoint_dir {
        weights.save(&dir.join("final.json"))?;
    }
    Ok(TrainResult {
        weights,
        log,
        passes: all_passes,
    })
}
