//! The acceptance suite: ten end-to-end checks at fixed seeds, each
//! reporting one pass/fail line.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{sample_channel, Cell, ChannelShape, GeneratorParams, Side, FLAT_WING_RATIO};
use crate::channel2d::{compare_graph, solve_2d, Solve2dConfig};
use crate::error::Result;
use crate::frontpde::{self, SolveConfig, TrackConfig};
use crate::graph::build_graph;
use crate::ldp::{self, default_grid};
use crate::num::stats;
use crate::oracle::dense_junction_solve;
use crate::profile::WidthProfile;
use crate::reaction::{Kpp, NoReaction, Reaction};
use crate::sturm::{cell_matrix, expected_exit_time, hit_probability, hitting_transform, DepthPolicy, Method};
use crate::walker::{estimate_q_cellwise, feynman_kac, sample_exit, FkConfig, WalkerConfig};

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {} ({:.1} s)", self.id, self.title, self.detail, self.seconds)
    }
}

pub const TITLES: [&str; 10] = [
    "Brownian pipeline oracle",
    "algebraic identities",
    "dense junction solve",
    "Monte Carlo vs transform",
    "hitting formulas",
    "flat KPP speed",
    "LDP vs PDE speed",
    "graph-limit convergence",
    "mu and I properties",
    "Feynman-Kac vs FD",
];

/// The criteria that finish in seconds.
pub const QUICK: [usize; 5] = [1, 2, 3, 6, 9];

/// Runs criterion `id` (1-based). Errors inside a criterion count as a fail.
pub fn run(id: usize) -> CriterionResult {
    let start = Instant::now();
    let out = match id {
        1 => brownian_oracle(),
        2 => identities(),
        3 => dense_solve(),
        4 => mc_transform(),
        5 => hitting_formulas(),
        6 => flat_speed(),
        7 => ldp_vs_pde(),
        8 => graph_limit(),
        9 => properties(),
        10 => fk_vs_fd(),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (pass, detail) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    let pass = pass && limit(id).is_none_or(|l| seconds < l);
    CriterionResult { id, title: TITLES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"), pass, detail, seconds }
}

/// Wall-clock limit in seconds, where the criterion has one.
pub fn limit(id: usize) -> Option<f64> {
    match id {
        1 => Some(10.0),
        4 => Some(300.0),
        6 => Some(120.0),
        8 => Some(900.0),
        _ => None,
    }
}

pub fn run_all(ids: &[usize], mut each: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    ids.iter()
        .map(|&id| {
            let r = run(id);
            each(&r);
            r
        })
        .collect()
}

type Outcome = Result<(bool, String)>;

fn bump(x: f64) -> f64 {
    if x.abs() < 2.0 {
        0.5 * (1.0 + (std::f64::consts::PI * x / 2.0).cos())
    } else {
        0.0
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn brownian_oracle() -> Outcome {
    let shape = ChannelShape::flat(1.0, 1.0, 800);
    let grid: Vec<f64> = default_grid().into_iter().filter(|&l| (-10.0..=-1e-3).contains(&l)).collect();
    let c = ldp::mu_curve(&shape, &grid, Side::Plus, 4)?;
    let mu_err = c.lambdas.iter().zip(&c.mu).map(|(l, m)| (m + (-2.0 * l).sqrt()).abs()).fold(0.0, f64::max);
    let mut i_err: f64 = 0.0;
    for a in [0.25, 0.5, 1.0, 2.0, 5.0, 10.0] {
        i_err = i_err.max(rel(ldp::rate(&c, a)?.value, 0.5 / a));
    }
    let (cstar, _) = ldp::speed(&c, 1.0)?;
    let c_err = (cstar - 2f64.sqrt()).abs();
    let pass = mu_err < 1e-6 && i_err < 1e-5 && c_err < 1e-6;
    Ok((pass, format!("max|mu err| {mu_err:.2e}, max rel I err {i_err:.2e}, |c* - sqrt2| {c_err:.2e}")))
}

fn identities() -> Outcome {
    let shape = sample_channel(&GeneratorParams::default(), 2024, 101)?;
    let mut worst_x: f64 = 0.0;
    let mut worst_y: f64 = 0.0;
    let mut signs = true;
    let mut n = 0;
    for side in [Side::Plus, Side::Minus] {
        let cells = shape.outward(side);
        for k in 0..100 {
            for lambda in [-0.1, -1.0, -5.0] {
                let t = cell_matrix([&cells[k], &cells[k + 1]], lambda, Method::Ode)?;
                worst_x = worst_x.max(rel(t.x, t.x_s));
                worst_y = worst_y.max(rel(t.y, t.y_s));
                signs &= t.x < 0.0 && t.y >= 1.0;
            }
            n += 1;
        }
    }
    let mut rho_ok = true;
    for side in [Side::Plus, Side::Minus] {
        for lambda in [-0.1, -1.0, -5.0] {
            let r = hitting_transform(&shape, lambda, side, &DepthPolicy { report: Some(100), ..Default::default() })?;
            rho_ok &= r.rho.iter().all(|&p| p > 0.0 && p <= 1.0);
        }
    }
    let pass = worst_x < 1e-9 && worst_y < 1e-9 && signs && rho_ok;
    Ok((pass, format!("{n} cells, max rel diff x {worst_x:.2e}, y {worst_y:.2e}, x<0 & y>=1: {signs}, rho in (0,1]: {rho_ok}")))
}

fn dense_solve() -> Outcome {
    let shape = sample_channel(&GeneratorParams::default(), 17, 3)?;
    let cells = shape.outward(Side::Plus);
    let mut worst: f64 = 0.0;
    for lambda in [-0.1, -1.0, -5.0] {
        let dense = dense_junction_solve(&cells, lambda)?;
        let r = hitting_transform(&shape, lambda, Side::Plus, &DepthPolicy { fixed: Some(3), ..Default::default() })?;
        let mut prod = 1.0;
        for (j, rho) in r.rho.iter().enumerate().take(dense.len()) {
            prod *= rho;
            worst = worst.max(rel(prod, dense[j]));
        }
    }
    Ok((worst < 1e-9, format!("max rel diff of the products {worst:.2e}")))
}

fn mc_transform() -> Outcome {
    let params = GeneratorParams::default();
    let lambdas = [-0.25, -0.5, -1.0];
    let n_cells = 20;
    let long = 2000;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for seed in [7u64, 8] {
        let shape = sample_channel(&params, seed, long)?;
        let cfg = WalkerConfig { dt: 1e-3, horizon: 40.0, seed: 100 + seed, max_censoring: 0.6, ..Default::default() };
        let q = estimate_q_cellwise(&shape, Side::Plus, n_cells, &lambdas, &cfg, 2000)?;
        for (i, &lambda) in lambdas.iter().enumerate() {
            let r = hitting_transform(&shape, lambda, Side::Plus, &DepthPolicy { report: Some(long), ..Default::default() })?;
            let logs: Vec<f64> = r.rho.iter().map(|p| p.ln()).collect();
            let mu = stats::pairwise_sum(&logs) / stats::pairwise_sum(&r.lengths);
            // spread of 20-cell window sums around the ergodic rate
            let windows: Vec<f64> = logs
                .chunks_exact(n_cells)
                .zip(r.lengths.chunks_exact(n_cells))
                .map(|(l, len)| l.iter().sum::<f64>() - mu * len.iter().sum::<f64>())
                .collect();
            let quenched = stats::variance(&windows);
            let se = (q.log_se[i].powi(2) + quenched).sqrt();
            let z = (q.log_q[i] - mu * q.distance) / se;
            worst = worst.max(z.abs());
            parts.push(format!("s{seed} λ{lambda}: z {z:+.2}"));
        }
    }
    Ok((worst < 3.0, parts.join(", ")))
}

/// Unit-width junctions with varying spine widths in between and vanishing
/// wings, so the spine-only exit time applies to the graph walker.
pub fn spine_only(seed: u64, n: usize) -> ChannelShape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut side = || -> Vec<Cell> {
        (0..n)
            .map(|k| {
                let len = rng.random_range(1.0..2.0);
                let sines = [rng.random_range(-0.3..0.3), rng.random_range(-0.15..0.15)];
                let gamma = FLAT_WING_RATIO;
                let ext = 0.5;
                Cell {
                    spine_length: len,
                    spine_profile: WidthProfile::trig(1.0, 1.0, &sines, len),
                    wing_r: if k % 2 == 0 { ext } else { -ext },
                    wing_profile: WidthProfile::tip(gamma / ext.sqrt(), 0.5, ext),
                    alpha: 1.0,
                    beta: 1.0,
                    gamma,
                }
            })
            .collect()
    };
    let pos = side();
    let neg = side();
    ChannelShape::from_outward(pos, neg)
}

fn hitting_formulas() -> Outcome {
    let shape = sample_channel(&GeneratorParams::default(), 31, 12)?;
    let n = 4000;
    let cfg = WalkerConfig { dt: 1e-3, horizon: 200.0, seed: 5, ..Default::default() };
    let (x, a) = (2.0, 5.0);
    let hits = sample_exit(&build_graph(&shape)?, x, 0.0, a, &cfg, n)?;
    let p_mc = hits.iter().filter(|s| s.upper == Some(false)).count() as f64 / n as f64;
    let p = hit_probability(&shape, x, a)?;
    let z_hit = (p_mc - p) / (p * (1.0 - p) / n as f64).sqrt();

    let bare = spine_only(31, 12);
    let (x, a) = (1.5, 4.0);
    let exits = sample_exit(&build_graph(&bare)?, x, 0.0, a, &cfg, n)?;
    let times: Vec<f64> = exits.iter().map(|s| s.time).collect();
    let (m, se) = stats::mean_se(&times);
    let v = expected_exit_time(&bare, x, a)?;
    let z_exit = (m - v) / se;

    let long = sample_channel(&GeneratorParams::default(), 31, 800)?;
    let growth: Vec<f64> = [10.0, 100.0, 1000.0].iter().map(|&a| expected_exit_time(&long, 1.0, a)).collect::<Result<_>>()?;
    let grows = growth[1] > 5.0 * growth[0] && growth[2] > 5.0 * growth[1];
    let pass = z_hit.abs() < 3.0 && z_exit.abs() < 3.0 && grows;
    Ok((
        pass,
        format!(
            "hit freq {p_mc:.4} vs {p:.4} (z {z_hit:+.2}); exit mean {m:.4} vs {v:.4} (z {z_exit:+.2}); v(1;A) at A=10,100,1000: {:.1}, {:.1}, {:.1}",
            growth[0], growth[1], growth[2]
        ),
    ))
}

fn flat_speed() -> Outcome {
    let shape = ChannelShape::flat(1.0, 1.0, 80);
    let sol = frontpde::solve(&build_graph(&shape)?, &bump, &Kpp::default(), &SolveConfig { dx: 0.05, t_end: 40.0, ..Default::default() })?;
    let tr = frontpde::track(&sol.spine_profiles(), &TrackConfig::default())?;
    let e = rel(tr.speed_right, 2f64.sqrt());
    Ok((e < 0.05, format!("fitted speed {:.4} (rel err {e:.3}), left {:.4}", tr.speed_right, tr.speed_left)))
}

/// Fitted right speed, `c*₊` and the two dichotomy values at `T`.
/// `c*₊` comes from `curve_shape` averaged over `n_cells`.
fn speed_run(shape: &ChannelShape, curve_shape: &ChannelShape, n_cells: usize, t_end: f64) -> Result<(f64, f64, f64, f64)> {
    let graph = build_graph(shape)?;
    let curve = ldp::mu_curve(curve_shape, &default_grid(), Side::Plus, n_cells)?;
    let (cstar, _) = ldp::speed(&curve, 1.0)?;
    let sol = frontpde::solve(&graph, &bump, &Kpp::default(), &SolveConfig { dx: 0.05, t_end, ..Default::default() })?;
    let tr = frontpde::track(&sol.spine_profiles(), &TrackConfig::default())?;
    let u = &sol.last().u;
    let ahead = sol.grid.spine_value(u, 1.2 * cstar * t_end)?;
    let behind = sol.grid.spine_value(u, 0.8 * cstar * t_end)?;
    Ok((tr.speed_right, cstar, ahead, behind))
}

fn ldp_vs_pde() -> Outcome {
    let t_end = 60.0;
    let mut pass = true;
    let mut parts = Vec::new();
    let (c, cstar, ahead, behind) = speed_run(&ChannelShape::flat(1.0, 1.5, 80), &ChannelShape::flat(1.0, 1.5, 1000), 4, t_end)?;
    let flat_ok = rel(c, cstar) < 0.1 && ahead < 0.01 && behind > 0.99;
    pass &= flat_ok;
    parts.push(format!("flat: pde {c:.4} c* {cstar:.4} u(1.2c*T) {ahead:.1e} u(0.8c*T) {behind:.4}"));
    for seed in [1u64, 2, 3] {
        let shape = sample_channel(&GeneratorParams::default(), seed, 80)?;
        let (c, cstar, ahead, behind) = speed_run(&shape, &shape, 1000, t_end)?;
        pass &= rel(c, cstar) < 0.1;
        parts.push(format!(
            "seed {seed}: pde {c:.4} c* {cstar:.4} (rel {:.3}) u(1.2c*T) {ahead:.1e} u(0.8c*T) {behind:.4}",
            rel(c, cstar)
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn graph_limit() -> Outcome {
    let eps = [0.4, 0.2, 0.1];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut shapes: Vec<(String, ChannelShape)> = Vec::new();
    for seed in [0u64, 1] {
        shapes.push((format!("seed {seed}"), sample_channel(&GeneratorParams::rectangular(), seed, 4)?));
    }
    shapes.push(("flat".into(), ChannelShape::flat(1.0, 2.0, 4)));
    for (k, (name, shape)) in shapes.iter().enumerate() {
        let graph = build_graph(shape)?;
        let reference = frontpde::solve(
            &graph,
            &bump,
            &Kpp::default(),
            &SolveConfig { dx: 0.03125, t_end: 2.0, snapshot_every: 0.25, min_segments: 4, dt: None },
        )?;
        let mut errs = Vec::new();
        for &e in &eps {
            let s = solve_2d(shape, &bump, &Kpp::default(), &Solve2dConfig { eps: e, t_end: 2.0, snapshot_every: 0.25, ..Default::default() })?;
            errs.push(compare_graph(&s, &reference)?.sup);
        }
        let ok = if k < 2 { errs.windows(2).all(|w| w[1] < w[0]) } else { errs.iter().all(|&e| e < 1e-3) };
        pass &= ok;
        let list: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
        parts.push(if k < 2 { format!("{name}: {}", list.join(" > ")) } else { format!("{name}: {} (all < 1e-3)", list.join(", ")) });
    }
    Ok((pass, parts.join("; ")))
}

fn properties() -> Outcome {
    let shape = sample_channel(&GeneratorParams::default(), 42, 200)?;
    let curve = ldp::mu_curve(&shape, &default_grid(), Side::Plus, 1000)?;
    let (l, m) = (&curve.lambdas, &curve.mu);
    let n = l.len();
    let zero = m[n - 1].abs() < 1e-12 && l[n - 1] == 0.0;
    let negative = m[..n - 1].iter().all(|&v| v < 0.0);
    let convex = (1..n - 1).all(|i| {
        let s0 = (m[i] - m[i - 1]) / (l[i] - l[i - 1]);
        let s1 = (m[i + 1] - m[i]) / (l[i + 1] - l[i]);
        s1 >= s0 - 1e-9 * s0.abs().max(1.0)
    });
    let slope = |d: f64| -> Result<f64> {
        let c = ldp::mu_curve(&shape, &[-d, 0.0], Side::Plus, 1000)?;
        Ok((c.mu[1] - c.mu[0]) / d)
    };
    let (d1, d5) = (slope(1e-1)?, slope(1e-5)?);
    let a: Vec<f64> = (0..20).map(|i| 0.3 * (100.0f64 / 0.3).powf(i as f64 / 19.0)).collect();
    let iv: Vec<f64> = a.iter().map(|&a| ldp::rate_clamped(&curve, a).map(|r| r.value)).collect::<Result<_>>()?;
    let positive = iv.iter().all(|&v| v > 0.0);
    let decreasing = iv.windows(2).all(|w| w[1] < w[0]);
    let i_convex = (1..a.len() - 1).all(|i| {
        let s0 = (iv[i] - iv[i - 1]) / (a[i] - a[i - 1]);
        let s1 = (iv[i + 1] - iv[i]) / (a[i + 1] - a[i]);
        s1 >= s0 - 1e-9 * s0.abs()
    });
    let ratio = ldp::rate_clamped(&curve, 100.0)?.value / ldp::rate_clamped(&curve, 1.0)?.value;
    let pass = zero && negative && convex && d5 >= 10.0 * d1 && positive && decreasing && i_convex && ratio < 0.02;
    Ok((
        pass,
        format!(
            "mu(0)=0 {zero}, mu<0 {negative}, convex {convex}; slope at 0: {d1:.3} (δ=1e-1) -> {d5:.3} (δ=1e-5); I>0 {positive}, decreasing {decreasing}, convex {i_convex}, I(100)/I(1) {ratio:.4}"
        ),
    ))
}

fn fk_vs_fd() -> Outcome {
    let shape = ChannelShape::flat(1.0, 1.0, 16);
    let graph = build_graph(&shape)?;
    let eval: Vec<f64> = (0..21).map(|i| -10.0 + i as f64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    let cases: [(&str, &dyn Reaction); 2] = [("f=0", &NoReaction), ("KPP", &Kpp::default())];
    for (name, f) in cases {
        let fd = frontpde::solve(&graph, &bump, f, &SolveConfig { dx: 0.025, t_end: 5.0, snapshot_every: 5.0, ..Default::default() })?;
        let fk = feynman_kac(&graph, &bump, f, 5.0, &eval, &FkConfig::default())?;
        let u = &fd.last().u;
        let mut worst: f64 = 0.0;
        for (i, &x) in eval.iter().enumerate() {
            worst = worst.max((fk.u[i] - fd.grid.spine_value(u, x)?).abs() / fk.se[i]);
        }
        pass &= worst < 3.0 && fk.warnings.is_empty();
        parts.push(format!("{name}: max |FK-FD|/SE {worst:.2}, warnings {}", fk.warnings.len()));
    }
    Ok((pass, parts.join("; ")))
}
