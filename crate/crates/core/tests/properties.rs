//! Property tests for the structural invariants: graph validity under the
//! generators, scale-freedom of the load shares, drift bounds, the
//! throughput floor behind the drain argument, and per-slot conservation.

use proptest::prelude::*;

use spatial_aloha::fluid::{fluid_rhs, g_tilde, phi};
use spatial_aloha::graph::{build_graph, GraphSpec};
use spatial_aloha::numerics::{project_to_simplex, symmetric_eigenvalues_sorted};
use spatial_aloha::sim::{replication_rng, step, ArrivalModel, WorkloadState};
use spatial_aloha::spectral::{exp_neg_one, neighborhood_laplacian_square, spectral_report};

/// Small connected regular graphs from every generator family.
fn regular_graph_spec() -> impl Strategy<Value = GraphSpec> {
    prop_oneof![
        (3usize..12).prop_map(|nodes| GraphSpec::Cycle { nodes }),
        (2usize..8).prop_map(|nodes| GraphSpec::Complete { nodes }),
        ((2usize..4), (3usize..5)).prop_map(|(rows, cols)| GraphSpec::Torus { rows, cols }),
        ((4usize..11), (2usize..5), any::<u64>()).prop_filter_map(
            "pairing model needs K*d even and d < K",
            |(nodes, degree, seed)| {
                ((nodes * degree) % 2 == 0 && degree < nodes).then_some(
                    GraphSpec::RandomRegular { nodes, degree, seed },
                )
            }
        ),
    ]
}

proptest! {
    #[test]
    fn generated_graphs_satisfy_all_invariants(spec in regular_graph_spec()) {
        let g = build_graph(&spec).unwrap();
        let k = g.node_count();
        for i in 0..k {
            // Self-inclusion.
            prop_assert!(g.contains_closed(i, i));
            // Symmetry.
            for &j in g.closed_neighborhood(i) {
                prop_assert!(g.contains_closed(j, i));
            }
        }
        // Connectivity is checked on construction; regularity holds for
        // every generator in the strategy.
        prop_assert!(g.regular_degree().is_some());
    }

    #[test]
    fn laplacian_square_is_psd_with_one_dim_kernel(spec in regular_graph_spec()) {
        let g = build_graph(&spec).unwrap();
        let m = neighborhood_laplacian_square(&g).unwrap();
        let ev = symmetric_eigenvalues_sorted(&m);
        prop_assert!(ev[0].abs() <= 1e-9, "kernel eigenvalue {}", ev[0]);
        let gap = spectral_report(&g, 0.1).spectral_gap;
        if gap > 1e-6 {
            prop_assert!(ev[1] >= 1e-10, "second eigenvalue {} with gap {gap}", ev[1]);
        }
    }

    #[test]
    fn shares_and_throughput_are_scale_free(
        z in proptest::collection::vec(1e-3..1e3f64, 4),
        c in 1e-2..1e2f64,
    ) {
        let g = build_graph(&GraphSpec::Cycle { nodes: 4 }).unwrap();
        let scaled: Vec<f64> = z.iter().map(|v| v * c).collect();
        for (a, b) in phi(&z, &g).iter().zip(phi(&scaled, &g)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in g_tilde(&z, &g).iter().zip(g_tilde(&scaled, &g)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fluid_rhs_respects_drift_bounds(
        z in proptest::collection::vec(0.0..50.0f64, 7),
        lambda in 1e-3..1.5f64,
    ) {
        let g = build_graph(&GraphSpec::Cycle { nodes: 7 }).unwrap();
        let rates = vec![lambda; 7];
        for (i, r) in fluid_rhs(&z, &g, &rates).into_iter().enumerate() {
            prop_assert!(r <= lambda + 1e-14, "coordinate {i}: {r} > lambda");
            prop_assert!(r >= lambda - 1.0 - 1e-14, "coordinate {i}: {r} < lambda - 1");
        }
    }

    #[test]
    fn throughput_floor_on_random_regular_graphs(
        spec in regular_graph_spec(),
        seed in any::<u64>(),
    ) {
        let g = build_graph(&spec).unwrap();
        let k = g.node_count();
        let v = g.regular_degree().unwrap() as f64;
        use rand::Rng;
        let mut rng = replication_rng(seed, 0);
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..10.0)).collect();
        let gt = g_tilde(&z, &g);
        let ratio: f64 =
            z.iter().zip(&gt).map(|(a, b)| a * b).sum::<f64>() / z.iter().sum::<f64>();
        prop_assert!(ratio >= exp_neg_one() / v - 1e-12, "ratio {ratio} on {spec}");
    }

    #[test]
    fn simplex_projection_is_feasible_and_idempotent(
        x in proptest::collection::vec(-5.0..5.0f64, 2..9),
    ) {
        let y = project_to_simplex(&x);
        let total: f64 = y.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "sum {total}");
        prop_assert!(y.iter().all(|&v| v >= 0.0));
        let again = project_to_simplex(&y);
        for (a, b) in y.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conservation_and_independent_set_hold_for_random_runs(
        spec in regular_graph_spec(),
        lambda in 0.01..0.3f64,
        seed in any::<u64>(),
    ) {
        let g = build_graph(&spec).unwrap();
        let k = g.node_count();
        let arrivals = ArrivalModel::poisson_symmetric(lambda, k);
        let mut rng = replication_rng(seed, 0);
        let mut state = WorkloadState::new(vec![3; k]);
        for _ in 0..200 {
            let (next, outcome) = step(&state, &g, &arrivals, &mut rng);
            for i in 0..k {
                let expect =
                    state.counts[i] + outcome.arrivals[i] - outcome.successes[i] as u64;
                prop_assert_eq!(next.counts[i], expect);
                prop_assert!(outcome.attempts[i] <= state.counts[i]);
                prop_assert!(outcome.successes[i] <= 1);
                if outcome.successes[i] == 1 {
                    prop_assert_eq!(outcome.attempts[i], 1);
                    for j in g.open_neighbors(i) {
                        prop_assert_eq!(outcome.successes[j], 0);
                    }
                }
            }
            state = next;
        }
    }
}
