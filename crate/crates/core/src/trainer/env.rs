use std::sync::Arc;

use crate::de::{Archives, IndividualAction, PopulationState};
use crate::encoder::{encode, EncoderConfig, Observation};
use crate::error::{Error, Result};
use crate::ndcore::Rng;
use crate::problems::Problem;

/// Floor of the reward denominator `y*_0 - y*`.
pub const REWARD_GUARD: f64 = 1e-12;

/// Normalized improvement of the incumbent in one generation.
pub fn reward(previous_best: f64, best: f64, initial_best: f64, optimum: f64) -> f64 {
    (previous_best - best) / (initial_best - optimum).max(REWARD_GUARD)
}

/// One DE run seen as an episodic environment of `horizon` generations.
pub struct DeEnv {
    problem: Arc<dyn Problem>,
    pop: PopulationState,
    arch: Archives,
    rng: Rng,
    horizon: usize,
    encoder: EncoderConfig,
}

/// Result of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    /// `None` when the problem has no known optimum.
    pub reward: Option<f64>,
    pub done: bool,
}

impl DeEnv {
    pub fn new(
        problem: Arc<dyn Problem>,
        population: usize,
        budget: usize,
        horizon: usize,
        encoder: EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least one generation".into()));
        }
        let mut rng = Rng::new(seed);
        let pop = PopulationState::initialize(population, problem.as_ref(), budget, &mut rng)?;
        Ok(Self {
            problem,
            arch: Archives::new(population),
            pop,
            rng,
            horizon,
            encoder,
        })
    }

    pub fn population(&self) -> &PopulationState {
        &self.pop
    }

    pub fn archives(&self) -> &Archives {
        &self.arch
    }

    pub fn problem(&self) -> &Arc<dyn Problem> {
        &self.problem
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn generation(&self) -> usize {
        self.pop.generation
    }

    /// Finished when the horizon is reached or the budget is spent.
    pub fn done(&self) -> bool {
        self.pop.generation >= self.horizon || self.pop.exhausted()
    }

    pub fn observe(&self) -> Result<Observation> {
        encode(&self.pop, self.pop.generation, self.horizon, &self.encoder)
    }

    pub fn step(&mut self, actions: &[IndividualAction]) -> Result<EnvStep> {
        if self.done() {
            return Err(Error::Terminal("episode already finished".into()));
        }
        let out = self
            .pop
            .step(&mut self.arch, actions, self.problem.as_ref(), &mut self.rng)?;
        let reward = self
            .problem
            .optimum_value()
            .map(|opt| reward(out.previous_best, out.best, self.pop.initial_best, opt));
        Ok(EnvStep {
            reward,
            done: self.done(),
        })
    }

    /// `(y*_0 - y*_t) / (y*_0 - y*)`, the value the rewards telescope to.
    pub fn normalized_improvement(&self) -> Option<f64> {
        let opt = self.problem.optimum_value()?;
        Some(reward(self.pop.initial_best, self.pop.best_value, self.pop.initial_best, opt))
    }
}
