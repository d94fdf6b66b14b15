//! Differential evolution substrate: population lifecycle, archives, the
//! operator pool, bound repair and greedy one-to-one survivor selection.

mod archive;
mod operators;

use serde::{Deserialize, Serialize};

pub use archive::Archives;
pub use operators::{exponential_length, repair_bounds, CrossoverOp, Generation, MutationOp};

use crate::error::{Error, Result};
use crate::ndcore::Rng;
use crate::problems::Problem;

/// Smallest population that supports every operator.
pub const MIN_POPULATION: usize = 5;

/// Per-individual configuration chosen by a controller.
///
/// Mutation slots: `F`, second factor (`F_a` / `F_1`), `p`.
/// Crossover slots: `Cr`, `p`. Operators read only the slots they use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualAction {
    pub mutation: MutationOp,
    pub crossover: CrossoverOp,
    pub mutation_params: [f64; 3],
    pub crossover_params: [f64; 2],
}

impl IndividualAction {
    /// Builds an action from 1-based operator indices, clamping parameters to `[0, 1]`.
    pub fn new(
        mutation_index: usize,
        crossover_index: usize,
        mutation_params: [f64; 3],
        crossover_params: [f64; 2],
    ) -> Result<Self> {
        Ok(Self {
            mutation: MutationOp::from_index(mutation_index)?,
            crossover: CrossoverOp::from_index(crossover_index)?,
            mutation_params: mutation_params.map(|v| v.clamp(0.0, 1.0)),
            crossover_params: crossover_params.map(|v| v.clamp(0.0, 1.0)),
        })
    }

    /// Classic DE/rand/1/bin with fixed `F` and `Cr`.
    pub fn rand1_bin(f: f64, cr: f64) -> Self {
        Self {
            mutation: MutationOp::Rand1,
            crossover: CrossoverOp::Binomial,
            mutation_params: [f, 0.0, 0.0],
            crossover_params: [cr, 0.0],
        }
    }

    /// Uniform operators and uniform `[0, 1]` parameters.
    pub fn random(rng: &mut Rng) -> Self {
        let mutation = MutationOp::ALL[rng.index(14)];
        let crossover = CrossoverOp::ALL[rng.index(3)];
        let mutation_params = [rng.uniform(), rng.uniform(), rng.uniform()];
        let crossover_params = [rng.uniform(), rng.uniform()];
        Self {
            mutation,
            crossover,
            mutation_params,
            crossover_params,
        }
    }
}

/// State of one optimization run.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState {
    pub positions: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    pub generation: usize,
    /// Best value ever evaluated in this run.
    pub best_value: f64,
    pub best_position: Vec<f64>,
    /// Best value of the initial population.
    pub initial_best: f64,
    pub evaluations: usize,
    pub budget: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// What one generation changed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub previous_best: f64,
    pub best: f64,
    pub evaluations: usize,
    pub replaced: usize,
}

impl PopulationState {
    /// Uniform random population in the problem's box, evaluated once.
    pub fn initialize(
        size: usize,
        problem: &dyn Problem,
        budget: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if size < MIN_POPULATION {
            return Err(Error::Config(format!(
                "population size {size} is below the minimum of {MIN_POPULATION}"
            )));
        }
        if budget < size {
            return Err(Error::Config(format!(
                "budget {budget} cannot cover an initial population of {size}"
            )));
        }
        let lower = problem.lower().to_vec();
        let upper = problem.upper().to_vec();
        let positions: Vec<Vec<f64>> = (0..size)
            .map(|_| {
                lower
                    .iter()
                    .zip(&upper)
                    .map(|(lo, hi)| rng.uniform_in(*lo, *hi))
                    .collect()
            })
            .collect();
        let fitness = problem.evaluate_batch(&positions)?;
        let best = argmin(&fitness);
        Ok(Self {
            best_value: fitness[best],
            best_position: positions[best].clone(),
            initial_best: fitness[best],
            positions,
            fitness,
            generation: 0,
            evaluations: size,
            budget,
            lower,
            upper,
        })
    }

    pub fn size(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    /// Trial vectors for every individual, built from the frozen parents.
    pub fn trials(
        &self,
        arch: &Archives,
        actions: &[IndividualAction],
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        if actions.len() != self.size() {
            return Err(Error::Usage(format!(
                "{} actions for a population of {}",
                actions.len(),
                self.size()
            )));
        }
        let gen = Generation::new(self, arch);
        Ok(actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let donor = gen.mutate(i, a.mutation, &a.mutation_params, rng);
                let mut v = gen.crossover(i, &donor, a.crossover, &a.crossover_params, rng);
                repair_bounds(&mut v, &self.positions[i], &self.lower, &self.upper);
                v
            })
            .collect())
    }

    /// One generation: trials, evaluation until the budget runs out, greedy
    /// selection (offspring wins ties) and archive updates.
    pub fn step(
        &mut self,
        arch: &mut Archives,
        actions: &[IndividualAction],
        problem: &dyn Problem,
        rng: &mut Rng,
    ) -> Result<StepOutcome> {
        if self.exhausted() {
            return Err(Error::Terminal(format!(
                "budget of {} evaluations already spent",
                self.budget
            )));
        }
        let trials = self.trials(arch, actions, rng)?;
        let previous_best = self.best_value;
        let remaining = self.budget - self.evaluations;
        let evaluated = remaining.min(trials.len());
        let mut replaced = 0;
        for (i, trial) in trials.into_iter().take(evaluated).enumerate() {
            let f = problem.evaluate(&trial);
            self.evaluations += 1;
            if f < self.best_value {
                self.best_value = f;
                self.best_position = trial.clone();
            }
            if f <= self.fitness[i] {
                let parent = std::mem::replace(&mut self.positions[i], trial);
                self.fitness[i] = f;
                arch.push_replaced(parent, rng);
                replaced += 1;
            }
        }
        self.generation += 1;
        Ok(StepOutcome {
            previous_best,
            best: self.best_value,
            evaluations: evaluated,
            replaced,
        })
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
