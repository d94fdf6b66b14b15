use super::weights::{positional_table, PolicyWeights, EMBED};
use crate::encoder::Observation;
use crate::error::{Error, Result};
use crate::ndcore::{Array, AttentionVars, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 0.5;

/// Tape nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    /// `[N, 64]` landscape features.
    pub features: Var,
    /// `[N, 80]` decision vectors.
    pub decision: Var,
    pub mutation_log_probs: Var,
    pub crossover_log_probs: Var,
    pub mutation_mu: Var,
    pub mutation_sigma: Var,
    pub crossover_mu: Var,
    pub crossover_sigma: Var,
    /// `[N, 1]` per-individual critic outputs.
    pub values: Var,
    /// Scalar population value (mean of `values`).
    pub value: Var,
}

/// Leaves for every weight array, in storage order.
pub fn attach(tape: &mut Tape, weights: &PolicyWeights) -> Vec<Var> {
    weights.arrays().iter().map(|a| tape.leaf(a.clone())).collect()
}

struct Lookup<'a> {
    weights: &'a PolicyWeights,
    leaves: &'a [Var],
}

impl Lookup<'_> {
    fn var(&self, name: &str) -> Var {
        let i = self
            .weights
            .position(name)
            .unwrap_or_else(|| panic!("missing weight {name}"));
        self.leaves[i]
    }

    fn linear(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        tape.linear(x, self.var(&format!("{name}.w")), self.var(&format!("{name}.b")))
    }

    fn attention(&self, block: &str) -> AttentionVars {
        let v = |part: &str, kind: &str| self.var(&format!("{block}.attn.{part}.{kind}"));
        AttentionVars {
            wq: v("q", "w"),
            bq: v("q", "b"),
            wk: v("k", "w"),
            bk: v("k", "b"),
            wv: v("v", "w"),
            bv: v("v", "b"),
            wo: v("o", "w"),
            bo: v("o", "b"),
        }
    }

    /// Residual mixing block with two layer norms over `[batch, tokens, 64]`.
    fn block(&self, tape: &mut Tape, h: Var, name: &str) -> Result<Var> {
        let cfg = self.weights.config();
        let mixed = if cfg.mlp_extractor {
            self.linear(tape, h, &format!("{name}.mix"))?
        } else {
            tape.multi_head_self_attention(h, &self.attention(name), cfg.heads)?
        };
        let r = tape.add(mixed, h)?;
        let hat = tape.layer_norm(
            r,
            self.var(&format!("{name}.ln1.gain")),
            self.var(&format!("{name}.ln1.shift")),
            LAYER_NORM_EPS,
        )?;
        let f = self.linear(tape, hat, &format!("{name}.ffn"))?;
        let r = tape.add(f, hat)?;
        tape.layer_norm(
            r,
            self.var(&format!("{name}.ln2.gain")),
            self.var(&format!("{name}.ln2.shift")),
            LAYER_NORM_EPS,
        )
    }

    fn actor(&self, tape: &mut Tape, dv: Var, head: &str) -> Result<Var> {
        let h = self.linear(tape, dv, &format!("{head}.hidden"))?;
        let h = tape.relu(h);
        self.linear(tape, h, &format!("{head}.out"))
    }

    fn sigma(&self, tape: &mut Tape, dv: Var, head: &str) -> Result<Var> {
        let z = self.actor(tape, dv, head)?;
        let s = tape.sigmoid(z);
        let s = tape.scale(s, SIGMA_MAX - SIGMA_MIN);
        Ok(tape.offset(s, SIGMA_MIN))
    }
}

/// Feature extractor followed by actor heads and critic.
pub fn forward(
    tape: &mut Tape,
    weights: &PolicyWeights,
    leaves: &[Var],
    obs: &Observation,
) -> Result<Heads> {
    let cfg = weights.config();
    let shape = obs.tuples.shape();
    if shape.len() != 3 || shape[2] != 3 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::Dimension(format!("observation must be D×N×3, got {shape:?}")));
    }
    let (d, n) = (shape[0], shape[1]);
    if d > cfg.max_dim {
        return Err(Error::Config(format!(
            "dimension {d} exceeds the positional table of {} rows",
            cfg.max_dim
        )));
    }
    let w = Lookup { weights, leaves };

    let o = tape.leaf(obs.tuples.clone());
    let h0 = w.linear(tape, o, "embed")?;
    // attention across solutions, one batch row per dimension
    let h1 = w.block(tape, h0, "solution")?;
    let h1t = tape.swap_axes01(h1)?;
    let table = positional_table(d);
    let pos = Array::from_fn(&[n, d, EMBED], |k| table.data()[k % (d * EMBED)]);
    let pos = tape.leaf(pos);
    let h1p = tape.add(h1t, pos)?;
    // attention across dimensions, one batch row per solution
    let h2 = w.block(tape, h1p, "dimension")?;
    let features = tape.mean_axis1(h2)?;

    let e_time = match obs.time {
        Some(t) if !cfg.encoder.no_time => {
            let s = tape.leaf(Array::new(vec![1, 1], vec![t])?);
            w.linear(tape, s, "time")?
        }
        _ => tape.leaf(Array::zeros(&[1, super::weights::TIME_EMBED])),
    };
    let e_time = tape.repeat_rows(e_time, n)?;
    let decision = tape.concat_last(features, e_time)?;

    let logits = w.actor(tape, decision, "mutation")?;
    let mutation_log_probs = tape.log_softmax(logits);
    let logits = w.actor(tape, decision, "crossover")?;
    let crossover_log_probs = tape.log_softmax(logits);
    let z = w.actor(tape, decision, "mutation_mu")?;
    let mutation_mu = tape.sigmoid(z);
    let mutation_sigma = w.sigma(tape, decision, "mutation_sigma")?;
    let z = w.actor(tape, decision, "crossover_mu")?;
    let crossover_mu = tape.sigmoid(z);
    let crossover_sigma = w.sigma(tape, decision, "crossover_sigma")?;

    let c = w.linear(tape, decision, "critic.l1")?;
    let c = tape.relu(c);
    let c = w.linear(tape, c, "critic.l2")?;
    let c = tape.relu(c);
    let values = w.linear(tape, c, "critic.out")?;
    let value = tape.mean(values);

    Ok(Heads {
        features,
        decision,
        mutation_log_probs,
        crossover_log_probs,
        mutation_mu,
        mutation_sigma,
        crossover_mu,
        crossover_sigma,
        values,
        value,
    })
}
