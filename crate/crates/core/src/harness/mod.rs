//! Experiment configuration, seeded multi-run benchmarking and baselines.

mod stats;

pub use stats::{
    aei, aggregate, compare, curves, final_values, mean, median, midranks, population_std,
    quantile, rank_sum, rank_sum_test, sample_std, summary_csv, AeiInputs, Comparison,
    ComparisonTable, RankSum, Summary, AEI_GUARD, MIN_RANK_SUM_SAMPLE, SUMMARY_HEADER,
};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::de::IndividualAction;
use crate::error::{Error, Result};
use crate::ndcore::Rng;
use crate::policy::{act, ActMode, PolicyConfig, PolicyWeights};
use crate::problems::{make_instance, Problem, TRAIN_IDS};
use crate::trainer::{AdvantageEstimator, DeEnv, TrainerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    RldeAfl,
    RandomAction,
    VanillaDe,
    RandomSearch,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::RldeAfl => "rlde-afl",
            Algorithm::RandomAction => "random-action",
            Algorithm::VanillaDe => "vanilla-de",
            Algorithm::RandomSearch => "random-search",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Algorithm::RldeAfl,
            Algorithm::RandomAction,
            Algorithm::VanillaDe,
            Algorithm::RandomSearch,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemSetName {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Sample,
    Greedy,
}

impl From<PolicyMode> for ActMode {
    fn from(m: PolicyMode) -> Self {
        match m {
            PolicyMode::Sample => ActMode::Sample,
            PolicyMode::Greedy => ActMode::Greedy,
        }
    }
}

/// PPO hyperparameters of the `[ppo]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSettings {
    pub epochs: usize,
    pub n_steps: usize,
    pub kappa: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub checkpoint_every: usize,
}

impl Default for PpoSettings {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            epochs: t.epochs,
            n_steps: t.n_steps,
            kappa: t.kappa,
            gamma: t.gamma,
            learning_rate: t.learning_rate,
            clip: t.clip,
            value_coef: t.value_coef,
            entropy_coef: t.entropy_coef,
            normalize_advantages: t.normalize_advantages,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

/// Experiment description, read from and echoed as TOML.
///
/// Keys: `algorithm` (`rlde-afl`, `random-action`, `vanilla-de`,
/// `random-search`), `problem_set` (`train`, `test`, `all`), `functions`
/// (explicit function ids, overrides `problem_set`), `dim`, `population`,
/// `max_fe`, `runs`, `seed` (seed of run 0), `instance_seed`, `milestones`
/// (number of evenly spaced evaluation counts), `checkpoint`, `policy_mode`,
/// `vanilla_f`, `vanilla_cr`, `threads` (0 = all cores), and the tables
/// `[policy]` (`heads`, `max_dim`, `mlp_extractor`, `[policy.encoder]` with
/// `eta`, `minmax_fitness`, `no_time`) and `[ppo]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub problem_set: ProblemSetName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<usize>>,
    pub dim: usize,
    pub population: usize,
    pub max_fe: usize,
    pub runs: usize,
    pub seed: u64,
    pub instance_seed: u64,
    pub milestones: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub policy_mode: PolicyMode,
    pub vanilla_f: f64,
    pub vanilla_cr: f64,
    pub threads: usize,
    pub policy: PolicyConfig,
    pub ppo: PpoSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::RldeAfl,
            problem_set: ProblemSetName::Test,
            functions: None,
            dim: 10,
            population: 100,
            max_fe: 20_000,
            runs: 51,
            seed: 0,
            instance_seed: 0,
            milestones: 20,
            checkpoint: None,
            policy_mode: PolicyMode::Sample,
            vanilla_f: 0.5,
            vanilla_cr: 0.9,
            threads: 0,
            policy: PolicyConfig::default(),
            ppo: PpoSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c = Self::parse(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Parses without validating, for callers that override keys first.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.population < 5 || self.runs == 0 || self.milestones == 0 {
            return Err(Error::Config(
                "need dim >= 2, population >= 5, runs >= 1 and milestones >= 1".into(),
            ));
        }
        if self.max_fe < self.population || self.max_fe % self.population != 0 {
            return Err(Error::Config(format!(
                "max_fe {} must be a positive multiple of the population {}",
                self.max_fe, self.population
            )));
        }
        if self.algorithm == Algorithm::RldeAfl && self.checkpoint.is_none() {
            return Err(Error::Config("rlde-afl evaluation needs a checkpoint".into()));
        }
        self.policy.validate()
    }

    /// Generations per episode, `max_fe / population`.
    pub fn horizon(&self) -> usize {
        self.max_fe / self.population
    }

    pub fn function_ids(&self) -> Vec<usize> {
        if let Some(ids) = &self.functions {
            return ids.clone();
        }
        match self.problem_set {
            ProblemSetName::Train => TRAIN_IDS.to_vec(),
            ProblemSetName::Test => (1..=24).filter(|i| !TRAIN_IDS.contains(i)).collect(),
            ProblemSetName::All => (1..=24).collect(),
        }
    }

    pub fn problems(&self) -> Result<Vec<Arc<dyn Problem>>> {
        self.function_ids()
            .into_iter()
            .map(|fid| Ok(Arc::new(make_instance(fid, self.dim, self.instance_seed)?) as Arc<dyn Problem>))
            .collect()
    }

    /// Evaluation counts at which best-so-far values are recorded.
    pub fn milestone_evaluations(&self) -> Vec<usize> {
        (1..=self.milestones)
            .map(|k| k * self.max_fe / self.milestones)
            .collect()
    }

    /// Trainer settings implied by this experiment.
    pub fn trainer_config(&self) -> TrainerConfig {
        let p = &self.ppo;
        TrainerConfig {
            epochs: p.epochs,
            n_steps: p.n_steps,
            kappa: p.kappa,
            gamma: p.gamma,
            learning_rate: p.learning_rate,
            clip: p.clip,
            value_coef: p.value_coef,
            entropy_coef: p.entropy_coef,
            population: self.population,
            max_fe: self.max_fe,
            horizon: self.horizon(),
            seed: self.seed,
            normalize_advantages: p.normalize_advantages,
            advantage: AdvantageEstimator::NStep,
            checkpoint_every: p.checkpoint_every,
            policy: self.policy,
        }
    }

    /// Seed of run `run`; shared by all problems and algorithms so runs pair up.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

/// Outcome of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub problem: String,
    pub run: usize,
    pub seed: u64,
    /// Evaluation counts of `best_at`.
    pub milestones: Vec<usize>,
    pub best_at: Vec<f64>,
    pub final_best: f64,
    /// Normalized improvement `(y*_0 - y*_T) / (y*_0 - y*)` when the optimum is known.
    pub accumulated_reward: Option<f64>,
    pub evaluations: usize,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        } == Self {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Action source of a DE-based run.
#[derive(Clone, Debug)]
pub enum Controller {
    Policy { weights: Arc<PolicyWeights>, mode: ActMode },
    RandomAction,
    Fixed(IndividualAction),
}

impl Controller {
    pub fn actions(&self, env: &DeEnv, rng: &mut Rng) -> Result<Vec<IndividualAction>> {
        let n = env.population().size();
        match self {
            Controller::Policy { weights, mode } => {
                Ok(act(weights, &env.observe()?, rng, *mode)?.individual_actions())
            }
            Controller::RandomAction => Ok((0..n).map(|_| IndividualAction::random(rng)).collect()),
            Controller::Fixed(a) => Ok(vec![*a; n]),
        }
    }
}

/// Best-so-far values at each milestone, given `(evaluations, best)` after
/// the initial population and after each generation. A milestone before the
/// first entry takes the first entry's value.
fn milestone_values(trace: &[(usize, f64)], milestones: &[usize]) -> Vec<f64> {
    milestones
        .iter()
        .map(|&m| {
            trace
                .iter()
                .take_while(|(e, _)| *e <= m)
                .last()
                .unwrap_or(&trace[0])
                .1
        })
        .collect()
}

/// One DE run driven by `controller`; the controller's stream is separate
/// from the environment's so paired runs share their initial population.
pub fn run_de(
    problem: Arc<dyn Problem>,
    controller: &Controller,
    config: &ExperimentConfig,
    run: usize,
    encoder: crate::encoder::EncoderConfig,
) -> Result<RunRecord> {
    let start = Instant::now();
    let seed = config.run_seed(run);
    let mut env = DeEnv::new(
        problem.clone(),
        config.population,
        config.max_fe,
        config.horizon(),
        encoder,
        seed,
    )?;
    let mut rng = Rng::with_stream(seed, 2);
    let mut trace = vec![(env.population().evaluations, env.population().best_value)];
    while !env.done() {
        let actions = controller.actions(&env, &mut rng)?;
        env.step(&actions)?;
        trace.push((env.population().evaluations, env.population().best_value));
    }
    let milestones = config.milestone_evaluations();
    Ok(RunRecord {
        algorithm: config.algorithm.name().into(),
        problem: problem.name(),
        run,
        seed,
        best_at: milestone_values(&trace, &milestones),
        milestones,
        final_best: env.population().best_value,
        accumulated_reward: env.normalized_improvement(),
        evaluations: env.population().evaluations,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Uniform sampling in the box, `population` points per batch, keeping the incumbent.
pub fn run_random_search(problem: Arc<dyn Problem>, config: &ExperimentConfig, run: usize) -> Result<RunRecord> {
    let start = Instant::now();
    let seed = config.run_seed(run);
    let mut rng = Rng::new(seed);
    let (lo, hi) = (problem.lower().to_vec(), problem.upper().to_vec());
    let mut best = f64::INFINITY;
    let mut initial = f64::NAN;
    let mut evaluations = 0;
    let mut trace = Vec::new();
    while evaluations < config.max_fe {
        let batch = config.population.min(config.max_fe - evaluations);
        let xs: Vec<Vec<f64>> = (0..batch)
            .map(|_| lo.iter().zip(&hi).map(|(l, h)| rng.uniform_in(*l, *h)).collect())
            .collect();
        for y in problem.evaluate_batch(&xs)? {
            best = best.min(y);
        }
        evaluations += batch;
        if initial.is_nan() {
            initial = best;
        }
        trace.push((evaluations, best));
    }
    let milestones = config.milestone_evaluations();
    let accumulated_reward = problem
        .optimum_value()
        .map(|opt| crate::trainer::reward(initial, best, initial, opt));
    Ok(RunRecord {
        algorithm: config.algorithm.name().into(),
        problem: problem.name(),
        run,
        seed,
        best_at: milestone_values(&trace, &milestones),
        milestones,
        final_best: best,
        accumulated_reward,
        evaluations,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `config.runs` seeded runs of every selected problem.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_experiment_with(config, &config.problems()?, None)
}

/// Like [`run_experiment`] on explicit problems. With `out_dir`, the resolved
/// config is echoed to `config.toml`, each finished run is written to its own
/// file under `runs/` (existing run files are reused, so an interrupted
/// experiment resumes), and all records are collected in `records.jsonl`.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    problems: &[Arc<dyn Problem>],
    out_dir: Option<&Path>,
) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let mut resolved = config.clone();
    let controller = match config.algorithm {
        Algorithm::RldeAfl => {
            let path = config.checkpoint.as_ref().expect("validated");
            if !path.exists() {
                return Err(Error::Config(format!("checkpoint {} not found", path.display())));
            }
            let w = PolicyWeights::load(path)?;
            resolved.policy = *w.config();
            Some(Controller::Policy {
                weights: Arc::new(w),
                mode: config.policy_mode.into(),
            })
        }
        Algorithm::RandomAction => Some(Controller::RandomAction),
        Algorithm::VanillaDe => Some(Controller::Fixed(IndividualAction::rand1_bin(
            config.vanilla_f,
            config.vanilla_cr,
        ))),
        Algorithm::RandomSearch => None,
    };
    let run_dir = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join("runs"))?;
            fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
            Some(dir.join("runs"))
        }
        None => None,
    };
    let jobs: Vec<(usize, usize)> = (0..problems.len())
        .flat_map(|p| (0..config.runs).map(move |r| (p, r)))
        .collect();
    let encoder = resolved.policy.encoder;
    let job = |&(p, run): &(usize, usize)| -> Result<RunRecord> {
        let problem = problems[p].clone();
        let file = run_dir
            .as_ref()
            .map(|d| d.join(format!("{}-run{:03}.json", problem.name(), run)));
        if let Some(f) = file.as_ref().filter(|f| f.exists()) {
            if let Ok(r) = serde_json::from_str::<RunRecord>(&fs::read_to_string(f)?) {
                return Ok(r);
            }
        }
        let record = match &controller {
            Some(c) => run_de(problem, c, &resolved, run, encoder)?,
            None => run_random_search(problem, &resolved, run)?,
        };
        if let Some(f) = file {
            let tmp = f.with_extension("tmp");
            fs::write(&tmp, serde_json::to_string(&record).map_err(json_err)?)?;
            fs::rename(tmp, f)?;
        }
        Ok(record)
    };
    let records: Vec<RunRecord> = if config.threads == 1 {
        jobs.iter().map(job).collect::<Result<_>>()?
    } else if config.threads == 0 {
        jobs.par_iter().map(job).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| jobs.par_iter().map(job).collect::<Result<_>>())?
    };
    if let Some(dir) = out_dir {
        write_records(&dir.join("records.jsonl"), &records)?;
    }
    Ok(records)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).map_err(json_err)?)?;
    }
    Ok(())
}

/// Reads a JSONL record file, or the `records.jsonl` / `runs/` of an experiment directory.
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    if path.is_dir() {
        let jsonl = path.join("records.jsonl");
        if jsonl.exists() {
            return load_records(&jsonl);
        }
        let mut files: Vec<PathBuf> = fs::read_dir(path.join("runs"))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|f| f.extension().is_some_and(|e| e == "json"));
        files.sort();
        return files
            .iter()
            .map(|f| serde_json::from_str(&fs::read_to_string(f)?).map_err(json_err))
            .collect();
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(json_err))
        .collect()
}
