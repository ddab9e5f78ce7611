//! Monte Carlo simulation of the graph diffusion.
//!
//! Inside an edge the walker takes Euler–Maruyama steps with drift
//! `l'/(2l)`; on vanishing-width wings the tip distance is a Bessel process
//! of dimension `1 + β` and is sampled exactly. Near a branch point the
//! walker uses a Walsh shell: from distance `d < h` it leaves the ball of
//! radius `h` on its own edge with probability `d/h + (1 - d/h) c_j` and on
//! edge `i ≠ j` with probability `(1 - d/h) c_i`, where `c_i` are the
//! normalized gluing weights, charging the mean exit time `h² - d²`. Steps
//! that cross or (by the Brownian-bridge probability) touch a branch point
//! re-draw the edge from the same weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{ChannelShape, Side};
use crate::error::{Error, Result};
use crate::frontpde::GraphGrid;
use crate::graph::{EdgeKind, MetricGraph, VertexKind};
use crate::num::stats;
use crate::output::Table;
use crate::profile::Width;
use crate::reaction::Reaction;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WalkerConfig {
    pub dt: f64,
    /// Shell radius; `None` uses `√dt`. Always capped at 0.45 of the
    /// shortest incident edge.
    pub shell: Option<f64>,
    pub seed: u64,
    pub horizon: f64,
    /// Largest tolerated fraction of censored paths.
    pub max_censoring: f64,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        WalkerConfig { dt: 1e-3, shell: None, seed: 0, horizon: 100.0, max_censoring: 0.25 }
    }
}

/// Position on the graph: edge index, local coordinate from the edge's
/// start vertex, elapsed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphState {
    pub edge: usize,
    pub x: f64,
    pub t: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for sub-experiment `k` of a run.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    splitmix(seed ^ splitmix(k.wrapping_add(0x5151)))
}

/// Counter-based stream for one path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(path);
    r
}

#[derive(Debug, Clone, Copy)]
struct Target {
    edge: usize,
    at: f64,
    /// Hit when the local coordinate drops to `at` (else rises to it).
    below: bool,
    vertex: Option<usize>,
}

struct VertexInfo {
    kind: VertexKind,
    h: f64,
    /// `(edge, at_start, cumulative probability)`.
    choice: Vec<(usize, bool, f64)>,
}

/// Walker bound to one graph and configuration.
pub struct Walker<'g> {
    pub graph: &'g MetricGraph,
    pub cfg: WalkerConfig,
    verts: Vec<VertexInfo>,
    tip: Vec<Option<f64>>,
    sq: f64,
}

impl<'g> Walker<'g> {
    pub fn new(graph: &'g MetricGraph, cfg: WalkerConfig) -> Result<Self> {
        if !(cfg.dt > 0.0 && cfg.horizon > 0.0) {
            return Err(Error::Param("dt and horizon must be positive".into()));
        }
        let h0 = cfg.shell.unwrap_or(cfg.dt.sqrt());
        if !(h0 > 0.0) {
            return Err(Error::Param("shell radius must be positive".into()));
        }
        let verts = graph
            .vertices
            .iter()
            .map(|v| {
                let shortest = v.incident.iter().map(|i| graph.edges[i.edge].length()).fold(f64::INFINITY, f64::min);
                let total: f64 = v.incident.iter().map(|i| i.weight).sum();
                let mut acc = 0.0;
                let choice = v
                    .incident
                    .iter()
                    .map(|i| {
                        acc += i.weight / total;
                        (i.edge, i.at_start, acc)
                    })
                    .collect();
                VertexInfo { kind: v.kind, h: h0.min(0.45 * shortest), choice }
            })
            .collect();
        let tip = graph.edges.iter().map(|e| e.profile.tip().map(|t| t.1)).collect();
        Ok(Walker { graph, cfg, verts, tip, sq: cfg.dt.sqrt() })
    }

    pub fn shell_radius(&self, vertex: usize) -> f64 {
        self.verts[vertex].h
    }

    pub fn physical_x(&self, s: &GraphState) -> f64 {
        self.graph.edges[s.edge].physical_x(s.x)
    }

    pub fn on_spine(&self, s: &GraphState) -> bool {
        self.graph.edges[s.edge].kind == EdgeKind::Spine
    }

    /// State at physical `x` on the spine. At a vertex the edge to the right
    /// is used.
    pub fn spine_state(&self, x: f64) -> Result<GraphState> {
        let sp = &self.graph.spine;
        let n = sp.len();
        for (k, &ei) in sp.iter().enumerate() {
            let e = &self.graph.edges[ei];
            let (a, b) = (e.origin_x, e.origin_x + e.length());
            if x >= a && (x < b || (k + 1 == n && x <= b)) {
                return Ok(GraphState { edge: ei, x: (x - a).clamp(0.0, e.length()), t: 0.0 });
            }
        }
        Err(Error::Domain(format!("x = {x} outside the spine")))
    }

    /// State at a vertex, on its first incident edge.
    pub fn vertex_state(&self, v: usize) -> GraphState {
        let (e, at_start, _) = self.verts[v].choice[0];
        GraphState { edge: e, x: if at_start { 0.0 } else { self.graph.edges[e].length() }, t: 0.0 }
    }

    fn pick(&self, v: usize, u: f64) -> (usize, bool) {
        let c = &self.verts[v].choice;
        let i = c.iter().position(|x| u < x.2).unwrap_or(c.len() - 1);
        (c[i].0, c[i].1)
    }

    fn place(&self, s: &mut GraphState, edge: usize, at_start: bool, dist: f64) {
        let len = self.graph.edges[edge].length();
        let d = dist.min(len);
        s.edge = edge;
        s.x = if at_start { d } else { len - d };
    }

    fn bessel<R: Rng>(&self, rho: f64, beta: f64, z: f64, dt: f64, rng: &mut R) -> f64 {
        let delta = 1.0 + beta;
        if rho * rho > 400.0 * dt {
            return (rho + 0.5 * (delta - 1.0) / rho * dt + dt.sqrt() * z).abs();
        }
        let nc = 0.5 * rho * rho / dt;
        let n = if nc > 0.0 { Poisson::new(nc).expect("positive mean").sample(rng) } else { 0.0 };
        let g: f64 = Gamma::new(0.5 * delta + n, 2.0).expect("positive shape").sample(rng);
        (dt * g).sqrt()
    }

    /// One update of the state: a shell exit near a branch point, otherwise
    /// one time step.
    pub fn step<R: Rng>(&self, s: &mut GraphState, rng: &mut R) {
        self.advance(s, rng, &[], f64::INFINITY);
    }

    /// Steps until `s.t = t`, shortening the last step so the state is
    /// observed exactly at `t`.
    pub fn advance_to<R: Rng>(&self, s: &mut GraphState, rng: &mut R, t: f64) {
        while s.t < t - 1e-12 {
            self.advance(s, rng, &[], t - s.t);
        }
    }

    /// Returns the index of the target hit during this update. No update
    /// takes longer than `cap`.
    fn advance<R: Rng>(&self, s: &mut GraphState, rng: &mut R, targets: &[Target], cap: f64) -> Option<usize> {
        let e = &self.graph.edges[s.edge];
        let len = e.length();
        let (v0, v1) = e.endpoints;
        let is_target = |v: usize| targets.iter().any(|t| t.vertex == Some(v));
        for (v, dist) in [(v0, s.x), (v1, len - s.x)] {
            let info = &self.verts[v];
            if info.kind == VertexKind::Interior && dist < info.h * (1.0 - 1e-9) && info.h * info.h - dist * dist <= cap && !is_target(v) {
                let h = info.h;
                let u: f64 = rng.random();
                let stay = dist / h;
                if u < stay {
                    let at_start = v == v0;
                    self.place(s, s.edge, at_start, h);
                } else {
                    let (edge, at_start) = self.pick(v, (u - stay) / (1.0 - stay));
                    self.place(s, edge, at_start, h);
                }
                s.t += h * h - dist * dist;
                return None;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        let dt = self.cfg.dt.min(cap);
        let sq = if dt == self.cfg.dt { self.sq } else { dt.sqrt() };
        let x_new = if let Some(beta) = self.tip[s.edge] {
            len - self.bessel(len - s.x, beta, z, dt, rng)
        } else {
            let drift = 0.5 * e.profile.dwidth(s.x) / e.profile.width(s.x);
            let mut y = s.x + drift * dt + sq * z;
            if y > len && self.verts[v1].kind == VertexKind::Exterior {
                y = (2.0 * len - y).max(0.0);
            }
            y
        };
        for (k, tg) in targets.iter().enumerate() {
            if tg.edge != s.edge {
                continue;
            }
            let (a, b) = if tg.below { (s.x - tg.at, x_new - tg.at) } else { (tg.at - s.x, tg.at - x_new) };
            if b <= 0.0 || (a * b < 20.0 * dt && rng.random::<f64>() < (-2.0 * a * b / dt).exp()) {
                s.t += 0.5 * dt;
                s.x = tg.at;
                return Some(k);
            }
        }
        let x_old = s.x;
        s.t += dt;
        if x_new < 0.0 {
            self.cross(s, v0, -x_new, rng);
        } else if x_new > len {
            self.cross(s, v1, x_new - len, rng);
        } else {
            s.x = x_new;
            for (v, d0, d1) in [(v0, x_old, x_new), (v1, len - x_old, len - x_new)] {
                if self.verts[v].kind != VertexKind::Interior || is_target(v) {
                    continue;
                }
                let q = 2.0 * d0 * d1 / dt;
                if q < 20.0 && rng.random::<f64>() < (-q).exp() {
                    let (edge, at_start) = self.pick(v, rng.random());
                    self.place(s, edge, at_start, d1);
                    break;
                }
            }
        }
        None
    }

    fn cross<R: Rng>(&self, s: &mut GraphState, v: usize, over: f64, rng: &mut R) {
        let info = &self.verts[v];
        match info.kind {
            VertexKind::Joint => {
                let (edge, at_start, _) = *info.choice.iter().find(|c| c.0 != s.edge).unwrap_or(&info.choice[0]);
                self.place(s, edge, at_start, over);
            }
            VertexKind::Interior => {
                let (edge, at_start) = self.pick(v, rng.random());
                self.place(s, edge, at_start, over);
            }
            VertexKind::Exterior => {
                let len = self.graph.edges[s.edge].length();
                s.x = s.x.clamp(0.0, len);
            }
        }
    }

    fn target(&self, r: f64, below: bool) -> Result<Target> {
        let st = if below {
            self.spine_state(r)?
        } else {
            // the edge to the left of r
            let mut st = self.spine_state(r)?;
            if st.x == 0.0 {
                let v = self.graph.edges[st.edge].endpoints.0;
                if let Some(c) = self.verts[v].choice.iter().find(|c| !c.1 && self.graph.edges[c.0].kind == EdgeKind::Spine) {
                    st = GraphState { edge: c.0, x: self.graph.edges[c.0].length(), t: 0.0 };
                }
            }
            st
        };
        let e = &self.graph.edges[st.edge];
        let vertex = if st.x == 0.0 {
            Some(e.endpoints.0)
        } else if st.x == e.length() {
            Some(e.endpoints.1)
        } else {
            None
        };
        Ok(Target { edge: st.edge, at: st.x, below, vertex })
    }

    fn run<R: Rng>(&self, mut s: GraphState, rng: &mut R, targets: &[Target]) -> (f64, Option<usize>) {
        while s.t < self.cfg.horizon {
            if let Some(k) = self.advance(&mut s, rng, targets, f64::INFINITY) {
                return (s.t, Some(k));
            }
        }
        (self.cfg.horizon, None)
    }
}

/// Convenience form of [`Walker::step`].
pub fn step<R: Rng>(state: GraphState, graph: &MetricGraph, cfg: &WalkerConfig, rng: &mut R) -> Result<GraphState> {
    let w = Walker::new(graph, *cfg)?;
    let mut s = state;
    w.step(&mut s, rng);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Target,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitSample {
    pub time: f64,
    pub finite: bool,
    pub reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct HitRun {
    pub samples: Vec<HitSample>,
    pub censoring_rate: f64,
    pub horizon: f64,
}

impl HitRun {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["T", "censored"]);
        for s in &self.samples {
            t.push(vec![s.time.to_string(), (!s.finite).to_string()]);
        }
        t
    }
}

fn check_censoring(rate: f64, cfg: &WalkerConfig) -> Result<()> {
    if rate > cfg.max_censoring {
        return Err(Error::Censoring { rate, max: cfg.max_censoring });
    }
    Ok(())
}

/// First time the spine coordinate reaches `r` from `s`.
pub fn sample_hit(graph: &MetricGraph, s: f64, r: f64, cfg: &WalkerConfig, n_paths: usize) -> Result<HitRun> {
    let w = Walker::new(graph, *cfg)?;
    let start = w.spine_state(s)?;
    hits_from(&w, start, r, s > r, n_paths)
}

fn hits_from(w: &Walker, start: GraphState, r: f64, below: bool, n_paths: usize) -> Result<HitRun> {
    let tg = [w.target(r, below)?];
    let samples: Vec<HitSample> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(w.cfg.seed, p);
            let (t, hit) = w.run(start, &mut rng, &tg);
            match hit {
                Some(_) => HitSample { time: t, finite: true, reason: StopReason::Target },
                None => HitSample { time: t, finite: false, reason: StopReason::Horizon },
            }
        })
        .collect();
    let cens = samples.iter().filter(|s| !s.finite).count() as f64 / n_paths.max(1) as f64;
    check_censoring(cens, &w.cfg)?;
    Ok(HitRun { samples, censoring_rate: cens, horizon: w.cfg.horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QEstimate {
    pub lambda: f64,
    /// Midpoint of `bracket`.
    pub estimate: f64,
    pub se: f64,
    /// Censored paths counted as 0 and as `e^{λ H}`.
    pub bracket: (f64, f64),
    pub censoring_rate: f64,
    pub n_paths: usize,
}

/// `E e^{λT} 1{T < ∞}` from hit samples.
pub fn q_from_samples(run: &HitRun, lambda: f64) -> QEstimate {
    let v: Vec<f64> = run.samples.iter().map(|s| if s.finite { (lambda * s.time).exp() } else { 0.0 }).collect();
    let (m, se) = stats::mean_se(&v);
    let hi = m + run.censoring_rate * (lambda * run.horizon).exp();
    QEstimate {
        lambda,
        estimate: 0.5 * (m + hi),
        se,
        bracket: (m, hi),
        censoring_rate: run.censoring_rate,
        n_paths: run.samples.len(),
    }
}

/// Direct Monte Carlo estimate of `q(r, s, λ)`.
pub fn estimate_q(graph: &MetricGraph, r: f64, s: f64, lambda: f64, cfg: &WalkerConfig, n_paths: usize) -> Result<QEstimate> {
    if lambda > 0.0 {
        return Err(Error::Domain("λ ≤ 0 required".into()));
    }
    Ok(q_from_samples(&sample_hit(graph, s, r, cfg, n_paths)?, lambda))
}

#[derive(Debug, Clone)]
pub struct CellwiseQ {
    pub direction: Side,
    pub lambdas: Vec<f64>,
    /// Junction reached last: `X_n` in physical x.
    pub distance: f64,
    /// `ln q̂ = Σ_k ln ρ̂_k` per λ.
    pub log_q: Vec<f64>,
    pub log_se: Vec<f64>,
    /// `[cell][λ]`.
    pub cells: Vec<Vec<QEstimate>>,
}

/// `q(0, X_n, λ)` as the product over cells of Monte Carlo estimates of
/// `ρ_k = E_{X_k} e^{λ T_{X_{k-1}}}`, exact by the strong Markov property at
/// the junctions. The same hit samples serve all λ.
pub fn estimate_q_cellwise(
    shape: &ChannelShape,
    direction: Side,
    n_cells: usize,
    lambdas: &[f64],
    cfg: &WalkerConfig,
    n_paths: usize,
) -> Result<CellwiseQ> {
    if lambdas.iter().any(|l| *l > 0.0) {
        return Err(Error::Domain("λ ≤ 0 required".into()));
    }
    if shape.n_cells(direction) < n_cells + 1 {
        return Err(Error::Domain(format!("need more than {n_cells} cells on the {direction:?} side")));
    }
    let graph = crate::graph::build_graph(shape)?;
    let junctions = shape.junctions(direction);
    let mut cells = Vec::with_capacity(n_cells);
    for k in 1..=n_cells {
        let c = WalkerConfig { seed: derive_seed(cfg.seed, k as u64), ..*cfg };
        let w = Walker::new(&graph, c)?;
        let from = junctions[k - 1];
        let to = if k == 1 { 0.0 } else { junctions[k - 2] };
        let below = direction == Side::Plus;
        let start = w.spine_state(from)?;
        let run = hits_from(&w, start, to, below, n_paths)?;
        cells.push(lambdas.iter().map(|&l| q_from_samples(&run, l)).collect::<Vec<_>>());
    }
    let mut log_q = Vec::new();
    let mut log_se = Vec::new();
    for i in 0..lambdas.len() {
        let logs: Vec<f64> = cells.iter().map(|c| c[i].estimate.ln()).collect();
        let rel: Vec<f64> = cells.iter().map(|c| (c[i].se / c[i].estimate).powi(2)).collect();
        log_q.push(stats::pairwise_sum(&logs));
        log_se.push(stats::pairwise_sum(&rel).sqrt());
    }
    Ok(CellwiseQ { direction, lambdas: lambdas.to_vec(), distance: junctions[n_cells - 1], log_q, log_se, cells })
}

impl CellwiseQ {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["lambda", "log_q", "log_se", "distance"]);
        for i in 0..self.lambdas.len() {
            t.push_f64(&[self.lambdas[i], self.log_q[i], self.log_se[i], self.distance]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitSample {
    pub time: f64,
    /// Left through `b` rather than `a`; `None` when censored.
    pub upper: Option<bool>,
}

/// Exit of the spine coordinate from `(a, b)` starting at `x`.
pub fn sample_exit(graph: &MetricGraph, x: f64, a: f64, b: f64, cfg: &WalkerConfig, n_paths: usize) -> Result<Vec<ExitSample>> {
    if !(a < x && x < b) {
        return Err(Error::Domain("need a < x < b".into()));
    }
    let w = Walker::new(graph, *cfg)?;
    let start = w.spine_state(x)?;
    let tg = [w.target(a, true)?, w.target(b, false)?];
    let out: Vec<ExitSample> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let (t, hit) = w.run(start, &mut rng, &tg);
            ExitSample { time: t, upper: hit.map(|k| k == 1) }
        })
        .collect();
    let cens = out.iter().filter(|s| s.upper.is_none()).count() as f64 / n_paths.max(1) as f64;
    check_censoring(cens, cfg)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct FkConfig {
    pub walker: WalkerConfig,
    /// Spacing of the time levels on which `u` is stored.
    pub level_step: f64,
    /// Picard window; a multiple of `level_step`.
    pub window: f64,
    /// Node spacing of the space grid.
    pub grid_dx: f64,
    pub replicas: usize,
    pub paths_per_replica: usize,
    pub max_picard: usize,
    pub picard_tol: f64,
}

impl Default for FkConfig {
    fn default() -> Self {
        FkConfig {
            walker: WalkerConfig { dt: 0.01, horizon: f64::INFINITY, ..Default::default() },
            level_step: 0.1,
            window: 0.5,
            grid_dx: 0.125,
            replicas: 8,
            paths_per_replica: 500,
            max_picard: 50,
            picard_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FkSolution {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Standard error across independent replicas.
    pub se: Vec<f64>,
    /// Picard sup-norm deltas per window, first replica.
    pub picard_deltas: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
    /// Largest node value above 1 across replicas.
    pub max_excess: f64,
}

impl FkSolution {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["x", "u", "se"]);
        for i in 0..self.x.len() {
            t.push_f64(&[self.x[i], self.u[i], self.se[i]]);
        }
        t
    }
}

type Stencil = (u32, u32, f32);

/// Solves `u = E[g(Y_t) exp(∫_0^t c(u(t - s, Y_s)) ds)]`, `c(u) = f(u)/u`.
///
/// `u` is kept on a node × time-level lattice and interpolated linearly
/// along edges. Levels are resolved window by window: fresh paths leave
/// every node, the time integral uses the trapezoid rule on the levels, and
/// Picard iteration runs over the frozen paths. With `f ≡ 0` the estimate is
/// the plain mean of `g(Y_t)` from the evaluation points. The standard error
/// comes from independent replicas.
pub fn feynman_kac(
    graph: &MetricGraph,
    g: &(dyn Fn(f64) -> f64 + Sync),
    f: &dyn Reaction,
    t: f64,
    eval: &[f64],
    cfg: &FkConfig,
) -> Result<FkSolution> {
    if !(t > 0.0 && cfg.level_step > 0.0 && cfg.window >= cfg.level_step) {
        return Err(Error::Param("t, level_step > 0 and window >= level_step".into()));
    }
    if cfg.replicas < 2 || cfg.paths_per_replica == 0 {
        return Err(Error::Param("need at least 2 replicas and 1 path".into()));
    }
    let grid = GraphGrid::new(graph, cfg.grid_dx, 1)?;
    let n_levels = (t / cfg.level_step).round() as usize;
    let ds = t / n_levels as f64;
    let per_window = ((cfg.window / ds).round() as usize).max(1);
    let reaction = f.lipschitz() > 0.0 || f.fprime0() > 0.0;
    let mut deltas = Vec::new();
    let mut warnings = Vec::new();
    let mut max_excess: f64 = 0.0;
    let reps: Vec<Vec<f64>> = if reaction {
        let mut out = Vec::with_capacity(cfg.replicas);
        for r in 0..cfg.replicas {
            let wc = WalkerConfig { seed: derive_seed(cfg.walker.seed, 1000 + r as u64), horizon: f64::INFINITY, ..cfg.walker };
            let (u_nodes, d, w) = fk_replica(graph, &grid, g, f, n_levels, ds, per_window, &wc, cfg)?;
            if r == 0 {
                deltas = d;
            }
            warnings.extend(w);
            max_excess = max_excess.max(u_nodes.iter().fold(0.0f64, |a, b| a.max(b - 1.0)));
            if let Some(v) = u_nodes.iter().find(|v| **v < 0.0) {
                return Err(Error::Consistency { what: "non-negative Feynman–Kac estimate".into(), a: *v, b: 0.0 });
            }
            out.push(eval.iter().map(|&x| grid.spine_value(&u_nodes, x)).collect::<Result<Vec<_>>>()?);
        }
        out
    } else {
        // Linear case: u(t, x) = E_x g(Y_t), straight from the evaluation points.
        let walker = Walker::new(graph, WalkerConfig { horizon: f64::INFINITY, ..cfg.walker })?;
        let starts = eval.iter().map(|&x| walker.spine_state(x)).collect::<Result<Vec<_>>>()?;
        (0..cfg.replicas)
            .map(|r| {
                let seed = derive_seed(cfg.walker.seed, 1000 + r as u64);
                starts
                    .par_iter()
                    .enumerate()
                    .map(|(i, &start)| {
                        let np = cfg.paths_per_replica;
                        let vals: Vec<f64> = (0..np)
                            .map(|p| {
                                let mut rng = path_rng(seed, (i * np + p) as u64);
                                let mut s = start;
                                walker.advance_to(&mut s, &mut rng, t);
                                g(walker.physical_x(&s))
                            })
                            .collect();
                        stats::mean(&vals)
                    })
                    .collect()
            })
            .collect()
    };
    let mut u = Vec::with_capacity(eval.len());
    let mut se = Vec::with_capacity(eval.len());
    // Replicas that never reach the support of g report zero spread; floor
    // the error at one success in all paths, the resolution for 0 ≤ g ≤ 1.
    let floor = 1.0 / (cfg.replicas * cfg.paths_per_replica) as f64;
    for i in 0..eval.len() {
        let v: Vec<f64> = reps.iter().map(|r| r[i]).collect();
        let (m, s) = stats::mean_se(&v);
        u.push(m);
        se.push(s.max(floor));
    }
    Ok(FkSolution { x: eval.to_vec(), u, se, picard_deltas: deltas, warnings, max_excess })
}

/// Times, values per level, warnings.
type WindowRun = (Vec<f64>, Vec<Vec<f64>>, Vec<String>);

/// One replica on the node lattice. Each window restarts fresh paths from
/// every node at the last resolved level `u₀`, so that
/// `u(t₀ + τ, x) = E_x[u₀(Y_τ) exp(∫_0^τ c(u(t₀ + τ - s, Y_s)) ds)]`. In the
/// first window `u₀ = g` is read at the exact endpoint.
#[allow(clippy::too_many_arguments)]
fn fk_replica(
    graph: &MetricGraph,
    grid: &GraphGrid,
    g: &(dyn Fn(f64) -> f64 + Sync),
    f: &dyn Reaction,
    n_levels: usize,
    ds: f64,
    per_window: usize,
    wc: &WalkerConfig,
    cfg: &FkConfig,
) -> Result<WindowRun> {
    let walker = Walker::new(graph, *wc)?;
    let nn = grid.len();
    let np = cfg.paths_per_replica;
    let interp = |u: &[f64], s: &Stencil| {
        let w = s.2 as f64;
        (1.0 - w) * u[s.0 as usize] + w * u[s.1 as usize]
    };
    let mut prev: Vec<f64> = grid.node_x.iter().map(|&x| g(x)).collect();
    let mut deltas = Vec::new();
    let mut warnings = Vec::new();
    let mut w0 = 1;
    let mut pw = per_window;
    while w0 <= n_levels {
        let w1 = (w0 + pw - 1).min(n_levels);
        let k = w1 - w0 + 1;
        // Per node: paths × (k + 1) stencils; the starting level read at each offset.
        let sims: Vec<(Vec<Stencil>, Vec<f64>)> = (0..nn)
            .into_par_iter()
            .map(|i| {
                let start = if i < grid.n_vertex {
                    walker.vertex_state(i)
                } else {
                    let (e, x) = grid.node_loc[i];
                    GraphState { edge: e, x, t: 0.0 }
                };
                let mut st = Vec::with_capacity(np * (k + 1));
                let mut base = Vec::with_capacity(np * (k + 1));
                for p in 0..np {
                    let mut rng = path_rng(wc.seed, ((w0 * nn + i) * np + p) as u64);
                    let mut s = start;
                    for lvl in 0..=k {
                        walker.advance_to(&mut s, &mut rng, lvl as f64 * ds);
                        let (a, b, w) = grid.stencil(s.edge, s.x);
                        let sten = (a as u32, b as u32, w as f32);
                        st.push(sten);
                        base.push(if w0 == 1 { g(walker.physical_x(&s)) } else { grid.interpolate_quadratic(&prev, s.edge, s.x) });
                    }
                }
                (st, base)
            })
            .collect();
        // levels[m] = u at level w0 - 1 + m, m = 0..=k
        let mut levels: Vec<Vec<f64>> = vec![prev.clone(); k + 1];
        let mut hist = Vec::new();
        let mut contracting = true;
        for it in 0..cfg.max_picard {
            let new: Vec<Vec<f64>> = (0..nn)
                .into_par_iter()
                .map(|i| {
                    let (st, bv) = &sims[i];
                    (1..=k)
                        .map(|j| {
                            let vals: Vec<f64> = (0..np)
                                .map(|p| {
                                    let b = p * (k + 1);
                                    let mut acc = 0.5 * (f.c(bv[b + j]) + f.c(levels[j][i]));
                                    for m in 1..j {
                                        acc += f.c(interp(&levels[j - m], &st[b + m]));
                                    }
                                    bv[b + j] * (ds * acc).exp()
                                })
                                .collect();
                            stats::pairwise_sum(&vals) / np as f64
                        })
                        .collect()
                })
                .collect();
            let mut delta: f64 = 0.0;
            for (i, row) in new.iter().enumerate() {
                for (jj, v) in row.iter().enumerate() {
                    delta = delta.max((v - levels[jj + 1][i]).abs());
                    levels[jj + 1][i] = *v;
                }
            }
            hist.push(delta);
            if it >= 2 && delta > hist[it - 1] && delta > cfg.picard_tol {
                warnings.push(format!("Picard delta increased in window at level {w0}: {} -> {delta}", hist[it - 1]));
                contracting = false;
                break;
            }
            if delta <= cfg.picard_tol {
                break;
            }
        }
        if !contracting && k > 1 {
            pw = k / 2;
            warnings.push(format!("shrinking the window to {pw} levels"));
            continue;
        }
        if *hist.last().unwrap() > cfg.picard_tol {
            warnings.push(format!("Picard did not converge in window at level {w0}"));
        }
        deltas.push(hist);
        prev = levels.pop().unwrap();
        w0 = w1 + 1;
    }
    Ok((prev, deltas, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    #[test]
    fn flat_displacement_variance() {
        let g = build_graph(&ChannelShape::flat(1.0, 10.0, 3)).unwrap();
        let cfg = WalkerConfig { dt: 0.01, ..Default::default() };
        let w = Walker::new(&g, cfg).unwrap();
        let n = 4000;
        let d: Vec<f64> = (0..n)
            .map(|p| {
                let mut rng = path_rng(3, p);
                let mut s = w.spine_state(5.0).unwrap();
                for _ in 0..100 {
                    w.step(&mut s, &mut rng);
                }
                w.physical_x(&s) - 5.0
            })
            .collect();
        let v = stats::variance(&d);
        // variance of a sample variance with 4000 normals: sd ≈ √(2/n)
        assert!((v - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{v}");
    }

    #[test]
    fn flat_laplace_transform() {
        let g = build_graph(&ChannelShape::flat(1.0, 1.0, 12)).unwrap();
        let cfg = WalkerConfig { dt: 1e-3, horizon: 200.0, seed: 11, ..Default::default() };
        let q = estimate_q(&g, 0.0, 2.0, -0.5, &cfg, 4000).unwrap();
        let exact = (-2f64).exp();
        assert!((q.estimate - exact).abs() < 3.0 * q.se, "{q:?}");
    }

    #[test]
    fn seed_determinism() {
        let g = build_graph(&ChannelShape::flat(1.0, 1.0, 6)).unwrap();
        let cfg = WalkerConfig { dt: 1e-2, horizon: 50.0, seed: 5, ..Default::default() };
        let a = sample_hit(&g, 2.0, 0.0, &cfg, 64).unwrap();
        let b = sample_hit(&g, 2.0, 0.0, &cfg, 64).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
