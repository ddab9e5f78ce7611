//! Explicit finite volumes for `u_t = D_m D_p u + f(u)` on the metric graph
//! and level-set front tracking.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::num::{quad, stats};
use crate::output::Table;
use crate::profile::{Width, WidthProfile};
use crate::reaction::Reaction;

/// Nodes on every edge with shared vertex nodes.
///
/// Nodes `0..n_vertex` are the graph vertices; interior nodes follow edge by
/// edge. Neighbouring nodes on an edge are coupled by the conductance
/// `1/Δp`; each node carries the speed-measure mass `∫ 2l` of its dual cell.
#[derive(Debug, Clone)]
pub struct GraphGrid {
    pub edge_nodes: Vec<Vec<usize>>,
    pub edge_h: Vec<f64>,
    /// Physical x of each node.
    pub node_x: Vec<f64>,
    /// One `(edge, local)` position per node.
    pub node_loc: Vec<(usize, f64)>,
    pub n_vertex: usize,
    pub mass: Vec<f64>,
    /// CSR adjacency: neighbours of node `i` are `adj[off[i]..off[i+1]]`
    /// as `(node, conductance / mass_i)`.
    pub off: Vec<usize>,
    pub adj: Vec<(usize, f64)>,
    /// Spine nodes in increasing x.
    pub spine_nodes: Vec<usize>,
    pub edge_ids: Vec<i64>,
}

fn segment_p(w: &WidthProfile, a: f64, b: f64) -> f64 {
    if let Some((s, beta)) = w.tip() {
        let len = w.length();
        let e = 1.0 - beta;
        return ((len - a).max(0.0).powf(e) - (len - b).max(0.0).powf(e)) / (s * e);
    }
    quad::integrate(|y| 1.0 / w.width(y), a, b, 1e-13, 0.0).0
}

fn segment_m(w: &WidthProfile, a: f64, b: f64) -> f64 {
    if let Some((s, beta)) = w.tip() {
        let len = w.length();
        let e = 1.0 + beta;
        return 2.0 * s * ((len - a).max(0.0).powf(e) - (len - b).max(0.0).powf(e)) / e;
    }
    2.0 * quad::integrate(|y| w.width(y), a, b, 1e-13, 0.0).0
}

impl GraphGrid {
    /// Uniform nodes per edge with spacing `≤ dx` and at least
    /// `min_segments` segments.
    pub fn new(graph: &MetricGraph, dx: f64, min_segments: usize) -> Result<Self> {
        if !(dx > 0.0) || min_segments == 0 {
            return Err(Error::Param("dx > 0 and min_segments >= 1".into()));
        }
        let nv = graph.vertices.len();
        let mut node_x: Vec<f64> = graph.vertices.iter().map(|v| v.x).collect();
        let mut node_loc: Vec<(usize, f64)> = graph
            .vertices
            .iter()
            .map(|v| {
                let inc = &v.incident[0];
                let e = &graph.edges[inc.edge];
                (inc.edge, if inc.at_start { 0.0 } else { e.length() })
            })
            .collect();
        let mut mass = vec![0.0; nv];
        let mut links: Vec<(usize, usize, f64)> = Vec::new();
        let mut edge_nodes = Vec::with_capacity(graph.edges.len());
        let mut edge_h = Vec::with_capacity(graph.edges.len());
        for (ei, e) in graph.edges.iter().enumerate() {
            let len = e.length();
            let n = ((len / dx).ceil() as usize).max(min_segments);
            let h = len / n as f64;
            let mut ids = vec![e.endpoints.0];
            for i in 1..n {
                let x = i as f64 * h;
                ids.push(node_x.len());
                node_x.push(e.physical_x(x));
                node_loc.push((ei, x));
                mass.push(0.0);
            }
            ids.push(e.endpoints.1);
            for i in 0..n {
                let (a, b) = (i as f64 * h, if i + 1 == n { len } else { (i + 1) as f64 * h });
                let mid = 0.5 * (a + b);
                mass[ids[i]] += segment_m(&e.profile, a, mid);
                mass[ids[i + 1]] += segment_m(&e.profile, mid, b);
                links.push((ids[i], ids[i + 1], 1.0 / segment_p(&e.profile, a, b)));
            }
            edge_nodes.push(ids);
            edge_h.push(h);
        }
        let nn = node_x.len();
        let mut deg = vec![0usize; nn + 1];
        for &(a, b, _) in &links {
            deg[a + 1] += 1;
            deg[b + 1] += 1;
        }
        for i in 0..nn {
            deg[i + 1] += deg[i];
        }
        let off = deg;
        let mut fill = off.clone();
        let mut adj = vec![(0usize, 0.0); off[nn]];
        for &(a, b, c) in &links {
            adj[fill[a]] = (b, c / mass[a]);
            fill[a] += 1;
            adj[fill[b]] = (a, c / mass[b]);
            fill[b] += 1;
        }
        let mut spine_nodes = Vec::new();
        for &ei in &graph.spine {
            for &id in &edge_nodes[ei] {
                if spine_nodes.last() != Some(&id) {
                    spine_nodes.push(id);
                }
            }
        }
        Ok(GraphGrid {
            edge_nodes,
            edge_h,
            node_x,
            node_loc,
            n_vertex: nv,
            mass,
            off,
            adj,
            spine_nodes,
            edge_ids: graph.edges.iter().map(|e| e.id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.node_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_x.is_empty()
    }

    /// Largest diagonal rate `Σ_j C_ij / M_i`.
    pub fn max_rate(&self) -> f64 {
        (0..self.len())
            .map(|i| self.adj[self.off[i]..self.off[i + 1]].iter().map(|a| a.1).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Linear interpolation stencil `(a, b, w)` with value `(1-w) u_a + w u_b`.
    pub fn stencil(&self, edge: usize, x: f64) -> (usize, usize, f64) {
        let ids = &self.edge_nodes[edge];
        let n = ids.len() - 1;
        let s = (x / self.edge_h[edge]).max(0.0);
        let i = (s.floor() as usize).min(n - 1);
        let w = (s - i as f64).clamp(0.0, 1.0);
        (ids[i], ids[i + 1], w)
    }

    pub fn interpolate(&self, u: &[f64], edge: usize, x: f64) -> f64 {
        let (a, b, w) = self.stencil(edge, x);
        (1.0 - w) * u[a] + w * u[b]
    }

    /// Three-node Lagrange interpolation on the edge, centred on the nearest
    /// node; linear on single-segment edges.
    pub fn interpolate_quadratic(&self, u: &[f64], edge: usize, x: f64) -> f64 {
        let ids = &self.edge_nodes[edge];
        let n = ids.len() - 1;
        if n < 2 {
            return self.interpolate(u, edge, x);
        }
        let s = (x / self.edge_h[edge]).clamp(0.0, n as f64);
        let c = (s.round() as usize).clamp(1, n - 1);
        let t = s - c as f64;
        let (a, b, d) = (u[ids[c - 1]], u[ids[c]], u[ids[c + 1]]);
        b + 0.5 * t * (d - a) + 0.5 * t * t * (d - 2.0 * b + a)
    }

    /// Value on the spine at physical `x` by linear interpolation.
    pub fn spine_value(&self, u: &[f64], x: f64) -> Result<f64> {
        let xs: Vec<f64> = self.spine_nodes.iter().map(|&i| self.node_x[i]).collect();
        let n = xs.len();
        if !(x >= xs[0] && x <= xs[n - 1]) {
            return Err(Error::Domain(format!("x = {x} outside the spine [{}, {}]", xs[0], xs[n - 1])));
        }
        let i = xs.partition_point(|v| *v <= x).clamp(1, n - 1);
        let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        Ok((1.0 - w) * u[self.spine_nodes[i - 1]] + w * u[self.spine_nodes[i]])
    }

    /// `Σ M_i u_i`.
    pub fn total_mass(&self, u: &[f64]) -> f64 {
        let v: Vec<f64> = u.iter().zip(&self.mass).map(|(a, b)| a * b).collect();
        stats::pairwise_sum(&v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    pub dx: f64,
    pub t_end: f64,
    /// Fixed step; `None` picks `0.9 / (max rate + Lip f)`.
    pub dt: Option<f64>,
    pub snapshot_every: f64,
    pub min_segments: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { dx: 0.05, t_end: 40.0, dt: None, snapshot_every: 0.5, min_segments: 9 }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GraphSolution {
    pub grid: GraphGrid,
    pub snapshots: Vec<Snapshot>,
    pub dt: f64,
    pub steps: usize,
}

/// Time step satisfying the positivity bound for a grid and reaction.
pub fn stable_dt(grid: &GraphGrid, lip: f64) -> f64 {
    0.9 / (grid.max_rate() + lip)
}

/// Solves from `u(0) = g(x)` with `g` read at the physical x of each node.
pub fn solve(graph: &MetricGraph, g: &dyn Fn(f64) -> f64, f: &dyn Reaction, cfg: &SolveConfig) -> Result<GraphSolution> {
    let grid = GraphGrid::new(graph, cfg.dx, cfg.min_segments)?;
    let u0: Vec<f64> = grid.node_x.iter().map(|&x| g(x)).collect();
    solve_on(grid, u0, f, cfg)
}

pub fn solve_on(grid: GraphGrid, u0: Vec<f64>, f: &dyn Reaction, cfg: &SolveConfig) -> Result<GraphSolution> {
    if !(cfg.t_end > 0.0 && cfg.snapshot_every > 0.0) {
        return Err(Error::Param("t_end and snapshot_every must be positive".into()));
    }
    let bounded = u0.iter().all(|v| (0.0..=1.0).contains(v));
    let dt_max = cfg.dt.unwrap_or_else(|| stable_dt(&grid, f.lipschitz()));
    let per = (cfg.snapshot_every / dt_max).ceil() as usize;
    let dt = cfg.snapshot_every / per as f64;
    let n_snap = (cfg.t_end / cfg.snapshot_every).round() as usize;
    let mut u = u0;
    let mut next = vec![0.0; u.len()];
    let mut snapshots = vec![Snapshot { t: 0.0, u: u.clone() }];
    let mut steps = 0;
    for s in 1..=n_snap {
        for _ in 0..per {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..u.len() {
                let ui = u[i];
                let mut acc = 0.0;
                for &(j, w) in &grid.adj[grid.off[i]..grid.off[i + 1]] {
                    acc += w * (u[j] - ui);
                }
                let v = ui + dt * (acc + f.f(ui));
                lo = lo.min(v);
                hi = hi.max(v);
                next[i] = v;
            }
            std::mem::swap(&mut u, &mut next);
            steps += 1;
            if !lo.is_finite() || !hi.is_finite() || (bounded && (lo < -1e-12 || hi > 1.0 + 1e-12)) {
                let t = (s - 1) as f64 * cfg.snapshot_every + dt * steps as f64;
                return Err(Error::Stability { t, value: if lo < 0.0 { lo } else { hi } });
            }
        }
        snapshots.push(Snapshot { t: s as f64 * cfg.snapshot_every, u: u.clone() });
    }
    Ok(GraphSolution { grid, snapshots, dt, steps })
}

#[derive(Debug, Clone)]
pub struct SpineProfile {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl GraphSolution {
    pub fn spine_profiles(&self) -> Vec<SpineProfile> {
        let x: Vec<f64> = self.grid.spine_nodes.iter().map(|&i| self.grid.node_x[i]).collect();
        self.snapshots
            .iter()
            .map(|s| SpineProfile { t: s.t, x: x.clone(), u: self.grid.spine_nodes.iter().map(|&i| s.u[i]).collect() })
            .collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    /// `(t, edge id, x, u)` for every node of every snapshot.
    pub fn snapshot_table(&self) -> Table {
        let mut t = Table::new(&["t", "edge", "x", "u"]);
        for s in &self.snapshots {
            for i in 0..self.grid.len() {
                let e = self.grid.edge_ids[self.grid.node_loc[i].0];
                t.push(vec![s.t.to_string(), e.to_string(), self.grid.node_x[i].to_string(), s.u[i].to_string()]);
            }
        }
        t
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackConfig {
    pub level: f64,
    /// Snapshots with `t ≥ fit_from` enter the fit; `None` means the late half.
    pub fit_from: Option<f64>,
    /// Minimum distance between a crossing and the end of the spine.
    pub margin: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig { level: 0.5, fit_from: None, margin: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontTrace {
    pub times: Vec<f64>,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub speed_right: f64,
    pub speed_left: f64,
    pub r2_right: f64,
    pub r2_left: f64,
    pub fit_from: f64,
}

fn crossings(p: &SpineProfile, level: f64) -> Option<(f64, f64)> {
    let n = p.u.len();
    let r = (0..n).rev().find(|&i| p.u[i] >= level)?;
    let l = (0..n).find(|&i| p.u[i] >= level)?;
    let interp = |i: usize, j: usize| {
        let (ua, ub) = (p.u[i], p.u[j]);
        p.x[i] + (level - ua) / (ub - ua) * (p.x[j] - p.x[i])
    };
    let right = if r + 1 < n { interp(r, r + 1) } else { p.x[r] };
    let left = if l > 0 { interp(l - 1, l) } else { p.x[l] };
    Some((right, left))
}

/// Extreme level crossings per snapshot and least-squares speeds.
pub fn track(profiles: &[SpineProfile], cfg: &TrackConfig) -> Result<FrontTrace> {
    let t_end = profiles.last().map(|p| p.t).unwrap_or(0.0);
    let fit_from = cfg.fit_from.unwrap_or(0.5 * t_end);
    let mut times = Vec::new();
    let mut right = Vec::new();
    let mut left = Vec::new();
    for p in profiles {
        let (r, l) = crossings(p, cfg.level)
            .ok_or_else(|| Error::Domain(format!("no crossing of level {} at t = {}", cfg.level, p.t)))?;
        let (x0, x1) = (p.x[0], *p.x.last().unwrap());
        if r > x1 - cfg.margin || l < x0 + cfg.margin {
            return Err(Error::DomainExhausted { t: p.t, margin: (x1 - r).min(l - x0) });
        }
        times.push(p.t);
        right.push(r);
        left.push(l);
    }
    let k = times.partition_point(|t| *t < fit_from);
    if times.len() - k < 10 {
        return Err(Error::Param(format!("{} snapshots in the fit window, need 10", times.len() - k)));
    }
    for (name, v, s) in [("right", &right, 1.0), ("left", &left, -1.0)] {
        if let Some(w) = v[k..].windows(2).find(|w| s * (w[1] - w[0]) < -1e-6) {
            return Err(Error::Consistency { what: format!("monotone {name} front"), a: w[0], b: w[1] });
        }
    }
    let (_, sr, r2r) = stats::linear_fit(&times[k..], &right[k..]);
    let (_, sl, r2l) = stats::linear_fit(&times[k..], &left[k..]);
    Ok(FrontTrace { times, right, left, speed_right: sr, speed_left: sl, r2_right: r2r, r2_left: r2l, fit_from })
}

impl FrontTrace {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["t", "x_right", "x_left"]);
        for i in 0..self.times.len() {
            t.push_f64(&[self.times[i], self.right[i], self.left[i]]);
        }
        t
    }

    pub fn summary(&self) -> Table {
        let mut t = Table::new(&["speed_right", "speed_left", "r2_right", "r2_left", "fit_from"]);
        t.push_f64(&[self.speed_right, self.speed_left, self.r2_right, self.r2_left, self.fit_from]);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelShape;
    use crate::graph::build_graph;
    use crate::reaction::{Kpp, NoReaction};

    #[test]
    fn flat_mass_and_equilibrium() {
        let g = build_graph(&ChannelShape::flat(1.0, 1.0, 10)).unwrap();
        let cfg = SolveConfig { dx: 0.05, t_end: 2.0, snapshot_every: 0.5, ..Default::default() };
        let bump = |x: f64| if x.abs() < 1.0 { 0.5 * (1.0 + (std::f64::consts::PI * x).cos()) } else { 0.0 };
        let s = solve(&g, &bump, &NoReaction, &cfg).unwrap();
        let m0 = s.grid.total_mass(&s.snapshots[0].u);
        let m1 = s.grid.total_mass(&s.last().u);
        assert!((m1 - m0).abs() < 1e-10 * m0);
        let ones = solve(&g, &|_| 1.0, &Kpp::default(), &cfg).unwrap();
        assert!(ones.last().u.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn synthetic_front() {
        let x: Vec<f64> = (0..2001).map(|i| -100.0 + 0.1 * i as f64).collect();
        let profiles: Vec<SpineProfile> = (0..=40)
            .map(|k| {
                let t = 0.5 * k as f64;
                let u = x.iter().map(|xi| 1.0 / (1.0 + ((xi.abs() - 1.3 * t) * 2.0).exp())).collect();
                SpineProfile { t, x: x.clone(), u }
            })
            .collect();
        let tr = track(&profiles, &TrackConfig::default()).unwrap();
        assert!((tr.speed_right - 1.3).abs() < 1e-3);
        assert!((tr.speed_left + 1.3).abs() < 1e-3);
    }
}
