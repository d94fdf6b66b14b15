mod common;

use rlde_afl::encoder::{encode_parts, EncoderConfig, Observation};
use rlde_afl::ndcore::{Rng, Tape};
use rlde_afl::policy::{
    act, attach, evaluate_actions, extract_features, forward, parameter_shapes, score_on_tape,
    ActMode, PolicyConfig, PolicyWeights,
};
use rlde_afl::Error;

fn observation(n: usize, d: usize, seed: u64, cfg: &EncoderConfig) -> (Vec<Vec<f64>>, Vec<f64>, Observation) {
    let mut rng = Rng::new(seed);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.uniform_in(-5.0, 5.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.uniform_in(-3.0, 5.0))).collect();
    let obs = encode_parts(&xs, &ys, &vec![-5.0; d], &vec![5.0; d], 4, 20, cfg).unwrap();
    (xs, ys, obs)
}

fn permuted(n: usize, d: usize, seed: u64, perm: &[usize]) -> (Observation, Observation) {
    let cfg = EncoderConfig::default();
    let (xs, ys, obs) = observation(n, d, seed, &cfg);
    let px: Vec<Vec<f64>> = perm.iter().map(|&k| xs[k].clone()).collect();
    let py: Vec<f64> = perm.iter().map(|&k| ys[k]).collect();
    let pobs = encode_parts(&px, &py, &vec![-5.0; d], &vec![5.0; d], 4, 20, &cfg).unwrap();
    (obs, pobs)
}

#[test]
fn features_are_permutation_equivariant_at_several_shapes() {
    let w = PolicyWeights::init(PolicyConfig::default(), 3).unwrap();
    for (n, d) in [(5, 2), (20, 10), (50, 20)] {
        let mut perm: Vec<usize> = (0..n).collect();
        Rng::new(n as u64).shuffle(&mut perm);
        let (obs, pobs) = permuted(n, d, 9, &perm);
        let f = extract_features(&w, &obs).unwrap();
        let g = extract_features(&w, &pobs).unwrap();
        assert_eq!(f.shape(), &[n, 64]);
        let mut worst: f64 = 0.0;
        for (row, &k) in perm.iter().enumerate() {
            for c in 0..64 {
                worst = worst.max((g.data()[row * 64 + c] - f.data()[k * 64 + c]).abs());
            }
        }
        assert!(worst < 1e-9, "(N, D) = ({n}, {d}): {worst}");
    }
}

#[test]
fn mlp_variant_is_equivariant_too() {
    let cfg = PolicyConfig {
        mlp_extractor: true,
        ..PolicyConfig::default()
    };
    let w = PolicyWeights::init(cfg, 3).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let (obs, pobs) = permuted(5, 3, 1, &perm);
    let f = extract_features(&w, &obs).unwrap();
    let g = extract_features(&w, &pobs).unwrap();
    for (row, &k) in perm.iter().enumerate() {
        for c in 0..64 {
            assert!((g.data()[row * 64 + c] - f.data()[k * 64 + c]).abs() < 1e-9);
        }
    }
}

#[test]
fn forward_matches_straight_line_network() {
    for (mlp, seed) in [(false, 11), (true, 12)] {
        let cfg = PolicyConfig {
            mlp_extractor: mlp,
            ..PolicyConfig::default()
        };
        let w = PolicyWeights::init(cfg, seed).unwrap();
        let (_, _, obs) = observation(2, 2, seed, &EncoderConfig::default());
        let mut tape = Tape::new();
        let leaves = attach(&mut tape, &w);
        let h = forward(&mut tape, &w, &leaves, &obs).unwrap();
        let (feats, probs, values) = common::net::forward(&w, obs.tuples.data(), 2, 2, obs.time);
        let got_f = tape.value(h.features).data();
        let got_p: Vec<f64> = tape.value(h.mutation_log_probs).data().iter().map(|l| l.exp()).collect();
        let got_v = tape.value(h.values).data();
        for i in 0..2 {
            for c in 0..64 {
                assert!((got_f[i * 64 + c] - feats[i][c]).abs() < 1e-9);
            }
            for k in 0..14 {
                assert!((got_p[i * 14 + k] - probs[i][k]).abs() < 1e-9);
            }
            assert!((got_v[i] - values[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn parameter_count_matches_shape_table() {
    let linear = |i: usize, o: usize| i * o + o;
    let block = 4 * linear(64, 64) + linear(64, 64) + 4 * 64;
    let expected = linear(3, 64)
        + 2 * block
        + linear(1, 16)
        + (linear(80, 32) + linear(32, 14))
        + 3 * (linear(80, 32) + linear(32, 3))
        + 2 * (linear(80, 32) + linear(32, 2))
        + linear(80, 16)
        + linear(16, 8)
        + linear(8, 1);
    let w = PolicyWeights::init(PolicyConfig::default(), 0).unwrap();
    assert_eq!(w.parameter_count(), expected);
    assert_eq!(expected, 60_284);
    let shapes = parameter_shapes(w.config());
    assert_eq!(shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>(), expected);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let w = PolicyWeights::init(PolicyConfig::default(), 21).unwrap();
    assert_eq!(w, PolicyWeights::init(PolicyConfig::default(), 21).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    w.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = PolicyWeights::load(&path).unwrap();
    assert_eq!(back, w);
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn corrupt_checkpoints_are_diagnosed() {
    let w = PolicyWeights::init(PolicyConfig::default(), 2).unwrap();
    let text = w.to_json().unwrap();
    let bad_tag = text.replacen("rlde-afl-policy/1", "something-else", 1);
    let truncated = &text[..text.len() / 2];
    let renamed = text.replacen("\"embed.w\"", "\"embed.x\"", 1);
    for doc in [bad_tag.as_str(), truncated, renamed.as_str()] {
        match PolicyWeights::from_json(doc) {
            Err(Error::Checkpoint(msg)) => assert!(!msg.is_empty()),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }
}

#[test]
fn operator_frequencies_match_head_probabilities() {
    let w = PolicyWeights::init(PolicyConfig::default(), 6).unwrap();
    // identical individuals share one set of head probabilities
    let n = 100;
    let xs = vec![vec![1.0, -2.0]; n];
    let ys = vec![42.0; n];
    let obs = encode_parts(&xs, &ys, &[-5.0; 2], &[5.0; 2], 0, 10, &EncoderConfig::default()).unwrap();
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, &w);
    let h = forward(&mut tape, &w, &leaves, &obs).unwrap();
    let pm: Vec<f64> = tape.value(h.mutation_log_probs).data()[..14].iter().map(|l| l.exp()).collect();
    let pc: Vec<f64> = tape.value(h.crossover_log_probs).data()[..3].iter().map(|l| l.exp()).collect();
    let mut cm = [0usize; 14];
    let mut cc = [0usize; 3];
    let mut rng = Rng::new(13);
    let rounds = 1000;
    for _ in 0..rounds {
        let s = act(&w, &obs, &mut rng, ActMode::Sample).unwrap();
        for a in &s.actions {
            cm[a.mutation] += 1;
            cc[a.crossover] += 1;
        }
    }
    let total = (rounds * n) as f64;
    for (counts, probs) in [(&cm[..], &pm), (&cc[..], &pc)] {
        for (c, p) in counts.iter().zip(probs.iter()) {
            let sigma = (total * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - total * p).abs() < 3.0 * sigma, "{c} vs {}", total * p);
        }
    }
}

#[test]
fn mean_log_prob_gradient_matches_finite_differences() {
    let mut w = PolicyWeights::init(PolicyConfig::default(), 8).unwrap();
    let (_, _, obs) = observation(4, 3, 2, &EncoderConfig::default());
    let sample = act(&w, &obs, &mut Rng::new(5), ActMode::Sample).unwrap();
    let loss = |w: &PolicyWeights| -> f64 {
        evaluate_actions(w, &[obs.clone()], &[sample.actions.clone()]).unwrap()[0].log_prob / 4.0
    };
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, &w);
    let s = score_on_tape(&mut tape, &w, &leaves, &obs, &sample.actions).unwrap();
    let mean = tape.scale(s.log_prob, 0.25);
    let grads = tape.backward(mean).unwrap();
    for name in ["mutation_mu.out.w", "mutation_mu.hidden.w", "embed.w"] {
        let idx = w.names().iter().position(|n| n == name).unwrap();
        let g = grads.get(leaves[idx]);
        let mut rng = Rng::new(idx as u64);
        for _ in 0..12 {
            let k = rng.index(g.len());
            let h = 1e-6;
            let orig = w.arrays()[idx].data()[k];
            w.arrays_mut()[idx].data_mut()[k] = orig + h;
            let up = loss(&w);
            w.arrays_mut()[idx].data_mut()[k] = orig - h;
            let down = loss(&w);
            w.arrays_mut()[idx].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.data()[k];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-3, "{name}[{k}]: analytic {an}, numeric {fd}");
        }
    }
}

#[test]
fn same_weights_serve_two_and_twenty_dimensions() {
    let w = PolicyWeights::init(PolicyConfig::default(), 1).unwrap();
    for d in [2, 20] {
        let (_, _, obs) = observation(6, d, d as u64, &EncoderConfig::default());
        let f = extract_features(&w, &obs).unwrap();
        assert_eq!(f.shape(), &[6, 64]);
        let s = act(&w, &obs, &mut Rng::new(0), ActMode::Sample).unwrap();
        assert_eq!(s.actions.len(), 6);
        assert!(s.log_probs.iter().all(|l| l.is_finite()));
    }
}

#[test]
fn time_ablation_ignores_time_weights() {
    let cfg = PolicyConfig {
        encoder: EncoderConfig {
            no_time: true,
            ..EncoderConfig::default()
        },
        ..PolicyConfig::default()
    };
    let w = PolicyWeights::init(cfg, 4).unwrap();
    let (_, _, obs) = observation(3, 2, 0, &cfg.encoder);
    assert_eq!(obs.time, None);
    let s = act(&w, &obs, &mut Rng::new(1), ActMode::Sample).unwrap();
    let mut tape = Tape::new();
    let leaves = attach(&mut tape, &w);
    let sv = score_on_tape(&mut tape, &w, &leaves, &obs, &s.actions).unwrap();
    let grads = tape.backward(sv.log_prob).unwrap();
    let t = w.names().iter().position(|n| n == "time.w").unwrap();
    assert!(grads.get(leaves[t]).data().iter().all(|g| *g == 0.0));
}
