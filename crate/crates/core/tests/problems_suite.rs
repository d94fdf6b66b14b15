use rlde_afl::ndcore::Rng;
use rlde_afl::problems::{make_instance, make_instance_with_offset, Problem};

#[test]
fn no_sampled_point_beats_the_planted_optimum() {
    for fid in 1..=24 {
        let p = make_instance_with_offset(fid, 10, 21, -3.0).unwrap();
        let mut rng = Rng::new(fid as u64);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..10).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let v = p.value(&x);
            assert!(v >= p.f_opt - 1e-12, "f{fid}: {v} below f_opt");
            assert!(v.is_finite());
        }
    }
}

#[test]
fn evaluation_is_bit_deterministic() {
    let mut rng = Rng::new(5);
    let xs: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..7).map(|_| rng.uniform_in(-5.0, 5.0)).collect())
        .collect();
    for fid in 1..=24 {
        let a = make_instance(fid, 7, 99).unwrap().evaluate_batch(&xs).unwrap();
        let b = make_instance(fid, 7, 99).unwrap().evaluate_batch(&xs).unwrap();
        let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb, "f{fid}");
    }
}

#[test]
fn initial_population_gap_is_positive() {
    let p = make_instance(1, 10, 3).unwrap();
    let mut rng = Rng::new(8);
    let best = (0..100)
        .map(|_| {
            let x: Vec<f64> = (0..10).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            p.value(&x)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(best - p.optimum().1 > 0.0);
}

#[test]
fn shift_round_trip_is_identity() {
    for fid in [1, 9, 15, 23] {
        let p = make_instance(fid, 6, 4).unwrap();
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let roundtrip: Vec<f64> = x
                .iter()
                .zip(&p.x_opt)
                .map(|(a, o)| (a + o) - o)
                .collect();
            assert!((p.value(&x) - p.value(&roundtrip)).abs() <= 1e-9 * p.value(&x).abs().max(1.0));
        }
    }
}
