use narrowfront::channel::{mirror, sample_channel, GeneratorParams, Side};
use narrowfront::channel2d::{solve_2d, Solve2dConfig};
use narrowfront::frontpde::{solve, SolveConfig};
use narrowfront::graph::build_graph;
use narrowfront::reaction::{Kpp, NoReaction};
use narrowfront::sturm::{hit_probability, hitting_transform, DepthPolicy};
use proptest::prelude::*;

fn bump(x: f64) -> f64 {
    if x.abs() < 2.0 {
        0.5 * (1.0 + (std::f64::consts::PI * x / 2.0).cos())
    } else {
        0.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn ratios_and_transfer_signs(seed in 0u64..10_000, kappa in 0.01f64..5.0) {
        let shape = sample_channel(&GeneratorParams::default(), seed, 8).unwrap();
        let policy = DepthPolicy { report: Some(6), ..Default::default() };
        let r = hitting_transform(&shape, -kappa, Side::Plus, &policy).unwrap();
        for (c, rho) in r.cells.iter().zip(&r.rho) {
            prop_assert!(c.x < 0.0 && c.y >= 1.0 - 1e-12);
            prop_assert!(*rho > 0.0 && *rho <= 1.0);
        }
        let slower = hitting_transform(&shape, -1.5 * kappa, Side::Plus, &policy).unwrap();
        for (a, b) in slower.rho.iter().zip(&r.rho) {
            prop_assert!(a < b);
        }
    }

    #[test]
    fn mirror_swaps_directions(seed in 0u64..10_000, kappa in 0.05f64..3.0) {
        let shape = sample_channel(&GeneratorParams::default(), seed, 6).unwrap();
        let m = mirror(&shape);
        let policy = DepthPolicy { report: Some(4), ..Default::default() };
        let a = hitting_transform(&shape, -kappa, Side::Plus, &policy).unwrap();
        let b = hitting_transform(&m, -kappa, Side::Minus, &policy).unwrap();
        prop_assert!((a.log_sum - b.log_sum).abs() <= 1e-12 * a.log_sum.abs().max(1.0));
    }

    #[test]
    fn hit_probability_is_a_decreasing_probability(seed in 0u64..10_000, f1 in 0.01f64..0.98, gap in 0.001f64..0.02, a in 1.0f64..8.0) {
        let shape = sample_channel(&GeneratorParams::default(), seed, 8).unwrap();
        let p1 = hit_probability(&shape, f1 * a, a).unwrap();
        let p2 = hit_probability(&shape, (f1 + gap) * a, a).unwrap();
        prop_assert!((0.0..=1.0).contains(&p1));
        prop_assert!(p2 < p1);
    }

    #[test]
    fn junction_weights_balance(seed in 0u64..10_000) {
        let shape = sample_channel(&GeneratorParams::default(), seed, 10).unwrap();
        let g = build_graph(&shape).unwrap();
        prop_assert!(g.max_junction_defect() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn graph_solution_stays_in_unit_interval(seed in 0u64..10_000) {
        let shape = sample_channel(&GeneratorParams::default(), seed, 6).unwrap();
        let g = build_graph(&shape).unwrap();
        let cfg = SolveConfig { dx: 0.1, t_end: 1.0, snapshot_every: 0.25, min_segments: 3, dt: None };
        let s = solve(&g, &bump, &Kpp::default(), &cfg).unwrap();
        for snap in &s.snapshots {
            prop_assert!(snap.u.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let h = solve(&g, &bump, &NoReaction, &cfg).unwrap();
        let m0 = h.grid.total_mass(&h.snapshots[0].u);
        let m1 = h.grid.total_mass(&h.last().u);
        prop_assert!((m0 - m1).abs() <= 1e-10 * m0);
    }

    #[test]
    fn channel2d_conserves_mass(seed in 0u64..10_000) {
        let shape = sample_channel(&GeneratorParams::rectangular(), seed, 3).unwrap();
        let cfg = Solve2dConfig { eps: 0.4, t_end: 0.25, snapshot_every: 0.25, ..Default::default() };
        let s = solve_2d(&shape, &bump, &NoReaction, &cfg).unwrap();
        let m0 = s.domain.total_mass(&s.snapshots[0].u);
        let m1 = s.domain.total_mass(&s.snapshots.last().unwrap().u);
        prop_assert!((m0 - m1).abs() <= 1e-10 * m0);
    }
}
