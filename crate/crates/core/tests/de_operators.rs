mod common;

use common::{de_trials, exponential_length_moments, DeSnapshot, OracleAction};
use rlde_afl::de::{exponential_length, Archives, CrossoverOp, IndividualAction, PopulationState};
use rlde_afl::ndcore::Rng;
use rlde_afl::problems::{make_instance, TRAIN_IDS};

fn seeded_state(n: usize, d: usize, seed: u64) -> (PopulationState, Archives, rlde_afl::problems::ProblemInstance) {
    let p = make_instance(1, d, seed).unwrap();
    let mut rng = Rng::new(seed);
    let pop = PopulationState::initialize(n, &p, 10_000, &mut rng).unwrap();
    let mut arch = Archives::new(n);
    for _ in 0..(3 * n - 2) {
        let v: Vec<f64> = (0..d).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        arch.push_replaced(v, &mut rng);
    }
    (pop, arch, p)
}

fn snapshot<'a>(pop: &'a PopulationState, arch: &Archives) -> DeSnapshot<'a> {
    DeSnapshot {
        pos: &pop.positions,
        fit: &pop.fitness,
        union: arch.union().to_vec(),
        recent: arch.recent().iter().cloned().collect(),
        former: arch.former().iter().cloned().collect(),
        lower: &pop.lower,
        upper: &pop.upper,
    }
}

#[test]
fn every_operator_pair_matches_straight_line_oracle() {
    let (pop, arch, _) = seeded_state(5, 2, 11);
    let snap = snapshot(&pop, &arch);
    let mut worst: f64 = 0.0;
    for m in 1..=14 {
        for c in 1..=3 {
            let mut prng = Rng::new(100 + m as u64);
            let mut actions = Vec::new();
            let mut oracle_actions: Vec<OracleAction> = Vec::new();
            for _ in 0..5 {
                let mp = [prng.uniform(), prng.uniform(), prng.uniform()];
                let cp = [prng.uniform(), prng.uniform()];
                actions.push(IndividualAction::new(m, c, mp, cp).unwrap());
                oracle_actions.push((m, c, mp, cp));
            }
            let seed = (m * 10 + c) as u64;
            let got = pop.trials(&arch, &actions, &mut Rng::new(seed)).unwrap();
            let want = de_trials(&snap, &oracle_actions, &mut Rng::new(seed));
            for (g, w) in got.iter().zip(&want) {
                for (a, b) in g.iter().zip(w) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-12, "max deviation {worst}");
}

#[test]
fn rand1_bin_step_matches_oracle_selection() {
    let (mut pop, mut arch, p) = seeded_state(5, 2, 3);
    let before = pop.clone();
    let snap = snapshot(&before, &arch);
    let actions = vec![IndividualAction::rand1_bin(0.5, 0.9); 5];
    let oracle_actions: Vec<OracleAction> = vec![(1, 1, [0.5, 0.0, 0.0], [0.9, 0.0]); 5];
    let want = de_trials(&snap, &oracle_actions, &mut Rng::new(42));
    pop.step(&mut arch, &actions, &p, &mut Rng::new(42)).unwrap();
    for i in 0..5 {
        let f: f64 = want[i].iter().zip(&p.x_opt).map(|(a, b)| (a - b) * (a - b)).sum();
        if f <= before.fitness[i] {
            assert_eq!(pop.positions[i], want[i]);
        } else {
            assert_eq!(pop.positions[i], before.positions[i]);
        }
    }
}

#[test]
fn prode_donor_frequencies_follow_inverse_distance() {
    let (pop, arch, _) = seeded_state(6, 3, 5);
    let target = 0;
    let action = IndividualAction::new(12, 1, [0.0; 3], [1.0, 0.0]).unwrap();
    let mut actions = vec![IndividualAction::rand1_bin(0.5, 0.5); 6];
    actions[target] = action;
    let gen = rlde_afl::de::Generation::new(&pop, &arch);
    let w = gen.prode_weights(target);
    let total: f64 = w.iter().sum();
    let draws = 100_000;
    let mut counts = vec![0usize; 6];
    let mut rng = Rng::new(8);
    for _ in 0..draws {
        // F = 0 makes the donor equal to the first ProDE pick
        let u = gen.mutate(target, action.mutation, &action.mutation_params, &mut rng);
        let k = pop.positions.iter().position(|x| *x == u).unwrap();
        counts[k] += 1;
    }
    assert_eq!(counts[target], 0);
    for k in 1..6 {
        let prob = w[k] / total;
        let expect = draws as f64 * prob;
        let sigma = (draws as f64 * prob * (1.0 - prob)).sqrt();
        assert!(
            (counts[k] as f64 - expect).abs() < 3.0 * sigma,
            "donor {k}: {} vs {expect:.1}",
            counts[k]
        );
    }
}

#[test]
fn exponential_length_matches_truncated_geometric() {
    let (mean, var) = exponential_length_moments(10, 0.5);
    let draws = 100_000;
    let mut rng = Rng::new(21);
    let total: usize = (0..draws).map(|_| exponential_length(10, 0.5, &mut rng)).sum();
    let sample = total as f64 / draws as f64;
    assert!((sample - mean).abs() / mean < 0.01);
    assert!((sample - mean).abs() < 3.0 * (var / draws as f64).sqrt());
}

#[test]
fn pbest_base_is_uniform_over_top_fraction() {
    let (pop, arch, _) = seeded_state(10, 2, 9);
    let gen = rlde_afl::de::Generation::new(&pop, &arch);
    let p = 0.3;
    let k = gen.pbest_count(p);
    assert_eq!(k, 3);
    // Cr = 0 keeps the base everywhere except jrand, where the NaN donor lands
    let donor = vec![f64::NAN; 2];
    let draws = 100_000;
    let mut counts = vec![0usize; 10];
    let mut rng = Rng::new(4);
    for _ in 0..draws {
        let v = gen.crossover(0, &donor, CrossoverOp::PBinomial, &[0.0, p], &mut rng);
        let j = if v[0].is_nan() { 1 } else { 0 };
        let owner = pop.positions.iter().position(|x| x[j] == v[j]).unwrap();
        counts[owner] += 1;
    }
    let prob = 1.0 / k as f64;
    let sigma = (draws as f64 * prob * (1.0 - prob)).sqrt();
    for (rank, &idx) in gen.ranking.iter().enumerate() {
        if rank < k {
            assert!((counts[idx] as f64 - draws as f64 * prob).abs() < 3.0 * sigma);
        } else {
            assert_eq!(counts[idx], 0);
        }
    }
}

#[test]
fn random_action_trajectories_keep_invariants() {
    for (s, &fid) in TRAIN_IDS.iter().enumerate() {
        let p = make_instance(fid, 10, s as u64).unwrap();
        let mut rng = Rng::new(s as u64);
        let n = 20;
        let budget = 2_010;
        let mut pop = PopulationState::initialize(n, &p, budget, &mut rng).unwrap();
        let mut arch = Archives::new(n);
        let mut last = pop.best_value;
        while !pop.exhausted() {
            let actions: Vec<_> = (0..n).map(|_| IndividualAction::random(&mut rng)).collect();
            pop.step(&mut arch, &actions, &p, &mut rng).unwrap();
            assert!(pop.best_value <= last);
            last = pop.best_value;
            assert!(pop.evaluations <= budget);
            assert!(pop.positions.iter().flatten().all(|v| (-5.0..=5.0).contains(v)));
            assert!(arch.union().len() <= n);
            assert!(arch.recent().len() <= n);
            assert!(arch.former().len() <= 2 * n);
            let archived = arch.union().iter().chain(arch.recent()).chain(arch.former());
            assert!(archived.flatten().all(|v| (-5.0..=5.0).contains(v)));
            let min = pop.fitness.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(min, pop.best_value);
        }
        assert_eq!(pop.evaluations, budget);
    }
}
