mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use srsi::gp::GpState;
use srsi::input_model::{
    build_posterior, divergence, sample_simplex, DivergenceKind, ObservationSet, ProbabilitySimplex,
};
use srsi::kernels::PairIndex;
use srsi::simulators::{ambulance_run, mm1k_analytic_cost, AmbulanceConfig};
use srsi::stats::{substream, StreamTag};

fn simplex_strategy(len: usize) -> impl Strategy<Value = ProbabilitySimplex> {
    proptest::collection::vec(0.0f64..1.0, len)
        .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|w| ProbabilitySimplex::normalized(w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn incremental_observations_match_dense_posterior(seed in 0u64..10_000, steps in 1usize..12) {
        let mut r = substream(seed, StreamTag::Likelihood, 1, 0);
        let (nx, nb) = (4, 3);
        let mut state: GpState = random_state(&mut r, nx, nb, 3);
        for _ in 0..steps {
            let pair = PairIndex::new(r.random_range(0..nx), r.random_range(0..nb));
            let ys: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            state.observe(pair, &ys).unwrap();
        }
        let (mu, v) = dense_posterior(state.kernel(), &state.log.rows(state.noise_floor()), state.beta0);
        prop_assert!((state.mu() - &mu).amax() <= 1e-8 * mu.amax().max(1.0));
        prop_assert!((state.v() - &v).amax() <= 1e-8 * v.amax());
    }

    #[test]
    fn new_pairs_never_raise_variance(seed in 0u64..10_000) {
        // re-sampling a logged pair may raise its plug-in noise, so only
        // first visits are checked
        let mut r = substream(seed, StreamTag::Likelihood, 2, 0);
        let mut state = random_state(&mut r, 3, 3, 2);
        let before = state.v().diagonal();
        let fresh = (0..9).map(|p| PairIndex::from_flat(p, 3)).find(|&p| state.log.get(p).is_none()).unwrap();
        state.observe(fresh, &[0.1, 0.4, -0.2]).unwrap();
        let after = state.v().diagonal();
        for (a, b) in after.iter().zip(before.iter()) {
            prop_assert!(*a <= b + 1e-12);
        }
    }

    #[test]
    fn divergences_are_symmetric_and_bounded(p in simplex_strategy(5), q in simplex_strategy(5)) {
        for kind in [DivergenceKind::TotalVariation, DivergenceKind::SqHellinger, DivergenceKind::JensenShannon] {
            let d = divergence(&p, &q, kind).unwrap();
            let e = divergence(&q, &p, kind).unwrap();
            prop_assert!((d - e).abs() <= 1e-15);
            prop_assert!(d >= 0.0);
            prop_assert!(divergence(&p, &p, kind).unwrap().abs() <= 1e-15);
            let bound = match kind {
                DivergenceKind::JensenShannon => std::f64::consts::LN_2,
                _ => 1.0,
            };
            prop_assert!(d <= bound + 1e-12);
        }
    }

    #[test]
    fn bootstrap_draws_are_simplices(counts in proptest::collection::vec(1usize..20, 1..8), seed in 0u64..1000) {
        let support: Vec<Vec<f64>> = (0..counts.len()).map(|i| vec![i as f64]).collect();
        let set = ObservationSet::from_counts(0, support, counts.clone()).unwrap();
        let post = build_posterior(&set, &vec![1.0; counts.len()]).unwrap();
        let mut r = substream(seed, StreamTag::PosteriorDraws, 0, 0);
        let w = sample_simplex(&post, &mut r);
        prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.weights().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn ambulance_fleet_is_conserved(
        side in 2usize..5,
        ambulances in 1usize..5,
        rate in 0.5f64..4.0,
        seed in 0u64..1000,
    ) {
        let config = AmbulanceConfig {
            grid_side: side,
            ambulances,
            calls_per_hour: rate,
            warmup_hours: 20.0,
            window_hours: 10.0,
            ..AmbulanceConfig::default()
        };
        let cells = side * side;
        let locations: Vec<usize> = (0..cells).collect();
        let simplex = ProbabilitySimplex::uniform(cells);
        let mut r = substream(seed, StreamTag::Replication, 0, 0);
        let run = ambulance_run(seed as usize % cells, &locations, &simplex, &config, &mut r).unwrap();
        prop_assert!(run.conserved);
        prop_assert!(run.fcfs);
        prop_assert!(run.max_busy <= ambulances);
        prop_assert!(run.mean_response_minutes > 0.0);
    }

    #[test]
    fn queue_cost_is_continuous_through_unit_load(k in 1u32..60, theta in 0.5f64..2.0, eps in -1e-6f64..1e-6) {
        let at = mm1k_analytic_cost(k, theta, theta, 1.0, 200.0).unwrap();
        let near = mm1k_analytic_cost(k, theta, theta * (1.0 + eps), 1.0, 200.0).unwrap();
        prop_assert!((at - near).abs() <= 1e-3 * (1.0 + at.abs()));
    }
}
