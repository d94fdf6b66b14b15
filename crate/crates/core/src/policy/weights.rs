use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyConfig;
use crate::error::{Error, Result};
use crate::ndcore::{Array, Rng};

/// Tag written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "rlde-afl-policy/1";

pub const EMBED: usize = 64;
pub const TIME_EMBED: usize = 16;
pub const DECISION: usize = EMBED + TIME_EMBED;
pub const ACTOR_HIDDEN: usize = 32;
pub const CRITIC_HIDDEN: [usize; 2] = [16, 8];
pub const MUTATION_OPS: usize = 14;
pub const CROSSOVER_OPS: usize = 3;
pub const MUTATION_PARAMS: usize = 3;
pub const CROSSOVER_PARAMS: usize = 2;

const ATTENTION_PARTS: [&str; 4] = ["q", "k", "v", "o"];

/// Names and shapes of every learnable array, in storage order.
pub fn parameter_shapes(config: &PolicyConfig) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
        out.push((format!("{name}.w"), vec![fan_in, fan_out]));
        out.push((format!("{name}.b"), vec![fan_out]));
    };
    linear("embed", 3, EMBED);
    for block in ["solution", "dimension"] {
        if config.mlp_extractor {
            linear(&format!("{block}.mix"), EMBED, EMBED);
        } else {
            for part in ATTENTION_PARTS {
                linear(&format!("{block}.attn.{part}"), EMBED, EMBED);
            }
        }
        linear(&format!("{block}.ffn"), EMBED, EMBED);
    }
    linear("time", 1, TIME_EMBED);
    for (head, width) in [
        ("mutation", MUTATION_OPS),
        ("crossover", CROSSOVER_OPS),
        ("mutation_mu", MUTATION_PARAMS),
        ("mutation_sigma", MUTATION_PARAMS),
        ("crossover_mu", CROSSOVER_PARAMS),
        ("crossover_sigma", CROSSOVER_PARAMS),
    ] {
        linear(&format!("{head}.hidden"), DECISION, ACTOR_HIDDEN);
        linear(&format!("{head}.out"), ACTOR_HIDDEN, width);
    }
    linear("critic.l1", DECISION, CRITIC_HIDDEN[0]);
    linear("critic.l2", CRITIC_HIDDEN[0], CRITIC_HIDDEN[1]);
    linear("critic.out", CRITIC_HIDDEN[1], 1);
    for block in ["solution", "dimension"] {
        for ln in ["ln1", "ln2"] {
            out.push((format!("{block}.{ln}.gain"), vec![EMBED]));
            out.push((format!("{block}.{ln}.shift"), vec![EMBED]));
        }
    }
    out
}

/// Every learnable array of the policy together with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyWeights {
    config: PolicyConfig,
    names: Vec<String>,
    arrays: Vec<Array>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: PolicyConfig,
    arrays: Vec<NamedArray>,
}

impl PolicyWeights {
    /// Fan-in scaled uniform initialization: weights and biases of a layer
    /// with `fan_in` inputs are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`;
    /// layer-norm gains start at 1 and shifts at 0.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let shapes = parameter_shapes(&config);
        let fan_in_of = |name: &str| -> usize {
            let w = format!("{}.w", name.rsplit_once('.').map_or(name, |(p, _)| p));
            shapes.iter().find(|(n, _)| *n == w).map_or(1, |(_, s)| s[0])
        };
        let mut names = Vec::with_capacity(shapes.len());
        let mut arrays = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            let array = if name.ends_with(".gain") {
                Array::filled(shape, 1.0)
            } else if name.ends_with(".shift") {
                Array::zeros(shape)
            } else {
                let bound = 1.0 / (fan_in_of(name) as f64).sqrt();
                Array::from_fn(shape, |_| rng.uniform_in(-bound, bound))
            };
            names.push(name.clone());
            arrays.push(array);
        }
        Ok(Self {
            config,
            names,
            arrays,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.position(name).map(|i| &self.arrays[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.position(name).map(|i| &mut self.arrays[i])
    }

    pub(crate) fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalars.
    pub fn parameter_count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config,
            arrays: self
                .names
                .iter()
                .zip(&self.arrays)
                .map(|(name, a)| NamedArray {
                    name: name.clone(),
                    shape: a.shape().to_vec(),
                    values: a.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "format tag {:?}, expected {CHECKPOINT_FORMAT:?}",
                doc.format
            )));
        }
        doc.config.validate()?;
        let expected = parameter_shapes(&doc.config);
        if expected.len() != doc.arrays.len() {
            return Err(Error::Checkpoint(format!(
                "{} arrays stored, configuration needs {}",
                doc.arrays.len(),
                expected.len()
            )));
        }
        let mut names = Vec::with_capacity(expected.len());
        let mut arrays = Vec::with_capacity(expected.len());
        for ((name, shape), stored) in expected.into_iter().zip(doc.arrays) {
            if stored.name != name || stored.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "array {:?} {:?} where {name:?} {shape:?} was expected",
                    stored.name, stored.shape
                )));
            }
            let array = Array::new(shape, stored.values)
                .map_err(|e| Error::Checkpoint(format!("array {name:?}: {e}")))?;
            if !array.is_finite() {
                return Err(Error::Checkpoint(format!("array {name:?} has non-finite values")));
            }
            names.push(name);
            arrays.push(array);
        }
        Ok(Self {
            config: doc.config,
            names,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Fixed sine/cosine table of `max_dim` rows and `EMBED` columns.
pub fn positional_table(max_dim: usize) -> Array {
    Array::from_fn(&[max_dim, EMBED], |k| {
        let (pos, c) = (k / EMBED, k % EMBED);
        let freq = 1.0 / 10_000f64.powf((c - c % 2) as f64 / EMBED as f64);
        let angle = pos as f64 * freq;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
