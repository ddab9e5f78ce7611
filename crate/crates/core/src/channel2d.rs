//! Explicit finite volumes for the ε-scaled thin-channel problem
//! `u_t = ½u_xx + u_zz/(2ε²) + V u_x + f(u)` on rectangular channels, and
//! comparison with the graph solution.
//!
//! The spine occupies `0 ≤ z ≤ l₀(x)`. A wing sits on top of the narrower
//! spine segment next to its junction, between the two junction widths, and
//! is separated from that spine by a slit along the spine's top edge. All
//! walls are reflecting.

use serde::Serialize;

use crate::channel::ChannelShape;
use crate::error::{Error, Result};
use crate::frontpde::GraphSolution;
use crate::graph::{build_graph, EdgeKind, MetricGraph};
use crate::num::stats;
use crate::output::Table;
use crate::profile::{ProfileKind, Width};
use crate::reaction::Reaction;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Grid2d {
    pub dx: f64,
    pub dz: f64,
}

impl Default for Grid2d {
    fn default() -> Self {
        Grid2d { dx: 0.0625, dz: 0.0625 }
    }
}

const NONE: u32 = u32::MAX;

/// Cell-centred grid over the channel with open cells indexed compactly.
#[derive(Debug, Clone)]
pub struct RectDomain {
    pub x0: f64,
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    /// Compact index of cell `(i, j)` at `i * nz + j`, or `NONE`.
    index: Vec<u32>,
    /// `(i, j)` of each open cell.
    pub cells: Vec<(usize, usize)>,
    /// Graph edge and local coordinate identified with each open cell.
    pub loc: Vec<(usize, f64)>,
    /// Neighbours east, west, north, south.
    nbr: Vec<[u32; 4]>,
    pub edge_ids: Vec<i64>,
    /// Wings narrower than `dz/2` left out of the 2D domain.
    pub omitted_wings: usize,
}

fn aligned(v: f64, q: f64) -> bool {
    let r = v / q;
    (r - r.round()).abs() < 1e-9
}

impl RectDomain {
    pub fn new(shape: &ChannelShape, grid: Grid2d) -> Result<(Self, MetricGraph)> {
        let graph = build_graph(shape)?;
        let (dx, dz) = (grid.dx, grid.dz);
        if !(dx > 0.0 && dz > 0.0) {
            return Err(Error::Param("dx, dz > 0".into()));
        }
        for c in shape.positive.iter().chain(&shape.negative) {
            if c.spine_profile.kind != ProfileKind::Constant {
                return Err(Error::InvalidShape("2D solver needs piecewise-constant spine widths".into()));
            }
        }
        let (xa, xb) = shape.extent();
        let misaligned = |what: &str, v: f64| Error::Param(format!("{what} {v} is not on the 2D grid"));
        for (what, v, q) in [("x_min", xa, dx), ("x_max", xb, dx)] {
            if !aligned(v, q) {
                return Err(misaligned(what, v));
            }
        }
        let nx = ((xb - xa) / dx).round() as usize;
        // Wing rectangles: (edge, x_lo, x_hi, z_lo, z_hi, attachment x).
        let mut wings = Vec::new();
        let mut omitted = 0;
        let mut top: f64 = 0.0;
        for (ei, e) in graph.edges.iter().enumerate() {
            match e.kind {
                EdgeKind::Spine => {
                    top = top.max(e.profile.width(0.0));
                    for (what, v, q) in [("junction", e.origin_x, dx), ("spine width", e.profile.width(0.0), dz)] {
                        if !aligned(v, q) {
                            return Err(misaligned(what, v));
                        }
                    }
                }
                EdgeKind::Wing => {
                    let (a, b, g, _) = graph.vertices[e.endpoints.0].junction.expect("wing attaches at a junction");
                    if g < 0.5 * dz {
                        omitted += 1;
                        continue;
                    }
                    if e.profile.kind != ProfileKind::Constant {
                        return Err(Error::InvalidShape("2D solver needs rectangular wings".into()));
                    }
                    let x_att = e.origin_x;
                    let x_end = e.physical_x(e.length());
                    let (lo, hi) = (x_att.min(x_end), x_att.max(x_end));
                    if lo < xa - 1e-12 || hi > xb + 1e-12 {
                        // outermost wing beyond the truncated spine
                        omitted += 1;
                        continue;
                    }
                    let (zl, zh) = (a.min(b), a.max(b));
                    let under = shape.spine_width(0.5 * (lo + hi))?;
                    if (under - zl).abs() > 1e-12 {
                        return Err(Error::InvalidShape(format!("wing {} does not sit on the narrower spine", e.id)));
                    }
                    for (what, v, q) in [("wing end", x_end, dx), ("wing width", zh, dz)] {
                        if !aligned(v, q) {
                            return Err(misaligned(what, v));
                        }
                    }
                    top = top.max(zh);
                    wings.push((ei, lo, hi, zl, zh, x_att));
                }
            }
        }
        let nz = (top / dz).round() as usize;
        let spine_at = |x: f64| -> Option<usize> {
            graph.spine.iter().copied().find(|&ei| {
                let e = &graph.edges[ei];
                x >= e.origin_x && x <= e.origin_x + e.length()
            })
        };
        let mut index = vec![NONE; nx * nz];
        let mut cells = Vec::new();
        let mut loc = Vec::new();
        let mut kind = Vec::new();
        for i in 0..nx {
            let x = xa + (i as f64 + 0.5) * dx;
            let se = spine_at(x).ok_or_else(|| Error::Domain(format!("no spine edge at x = {x}")))?;
            let e = &graph.edges[se];
            let w = e.profile.width(x - e.origin_x);
            for j in 0..nz {
                let z = (j as f64 + 0.5) * dz;
                let hit = if z < w {
                    Some((se, x - e.origin_x, 0u8))
                } else {
                    wings
                        .iter()
                        .find(|r| x > r.1 && x < r.2 && z > r.3 && z < r.4)
                        .map(|r| (r.0, (x - r.5).abs(), 1u8))
                };
                if let Some((edge, local, k)) = hit {
                    index[i * nz + j] = cells.len() as u32;
                    cells.push((i, j));
                    loc.push((edge, local));
                    kind.push(k);
                }
            }
        }
        let nbr = cells
            .iter()
            .enumerate()
            .map(|(c, &(i, j))| {
                let at = |ii: usize, jj: usize| index[ii * nz + jj];
                let east = if i + 1 < nx { at(i + 1, j) } else { NONE };
                let west = if i > 0 { at(i - 1, j) } else { NONE };
                let mut north = if j + 1 < nz { at(i, j + 1) } else { NONE };
                let mut south = if j > 0 { at(i, j - 1) } else { NONE };
                // slit between a spine and the wing above it
                if north != NONE && kind[north as usize] != kind[c] {
                    north = NONE;
                }
                if south != NONE && kind[south as usize] != kind[c] {
                    south = NONE;
                }
                [east, west, north, south]
            })
            .collect();
        let edge_ids = graph.edges.iter().map(|e| e.id).collect();
        Ok((RectDomain { x0: xa, nx, nz, dx, dz, index, cells, loc, nbr, edge_ids, omitted_wings: omitted }, graph))
    }

    pub fn n_open(&self) -> usize {
        self.cells.len()
    }

    pub fn center(&self, c: usize) -> (f64, f64) {
        let (i, j) = self.cells[c];
        (self.x0 + (i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dz)
    }

    pub fn open(&self, i: usize, j: usize) -> bool {
        i < self.nx && j < self.nz && self.index[i * self.nz + j] != NONE
    }

    pub fn total_mass(&self, u: &[f64]) -> f64 {
        stats::pairwise_sum(u) * self.dx * self.dz
    }

    /// Per column and edge: `(edge index, column, mean u over the cross-section)`.
    pub fn averages(&self, u: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64, usize)> = Vec::new();
        for (c, &(i, _)) in self.cells.iter().enumerate() {
            let e = self.loc[c].0;
            match out.iter_mut().rev().take(3).find(|r| r.0 == e && r.1 == i) {
                Some(r) => {
                    r.2 += u[c];
                    r.3 += 1;
                }
                None => out.push((e, i, u[c], 1)),
            }
        }
        out.into_iter().map(|(e, i, s, n)| (e, i, s / n as f64)).collect()
    }

    /// Largest spread `max - min` of u within one cross-section.
    pub fn oscillation(&self, u: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        let mut cur: Option<(usize, usize, f64, f64)> = None;
        for (c, &(i, _)) in self.cells.iter().enumerate() {
            let e = self.loc[c].0;
            cur = match cur {
                Some((ce, ci, lo, hi)) if ce == e && ci == i => Some((e, i, lo.min(u[c]), hi.max(u[c]))),
                other => {
                    if let Some((_, _, lo, hi)) = other {
                        best = best.max(hi - lo);
                    }
                    Some((e, i, u[c], u[c]))
                }
            };
        }
        if let Some((_, _, lo, hi)) = cur {
            best = best.max(hi - lo);
        }
        best
    }

    /// Largest `|Δū/Δx|` between neighbouring spine columns.
    pub fn spine_gradient(&self, u: &[f64], graph: &MetricGraph) -> f64 {
        let avg: Vec<(usize, f64)> = self
            .averages(u)
            .into_iter()
            .filter(|r| graph.edges[r.0].kind == EdgeKind::Spine)
            .map(|r| (r.1, r.2))
            .collect();
        avg.windows(2).filter(|w| w[1].0 == w[0].0 + 1).map(|w| (w[1].1 - w[0].1).abs() / self.dx).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Solve2dConfig {
    pub eps: f64,
    pub grid: Grid2d,
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Amplitude of the shear `V = a cos(π z / l₀(x))` on the spine; zero
    /// cross-sectional mean, zero in wings.
    pub shear: f64,
    pub dt: Option<f64>,
}

impl Default for Solve2dConfig {
    fn default() -> Self {
        Solve2dConfig { eps: 0.2, grid: Grid2d::default(), t_end: 2.0, snapshot_every: 0.25, shear: 0.0, dt: None }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot2d {
    pub t: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EpsSolution {
    pub eps: f64,
    pub domain: RectDomain,
    pub graph: MetricGraph,
    pub snapshots: Vec<Snapshot2d>,
    pub dt: f64,
    pub steps: usize,
}

/// Steps and cost of one solve, for reporting before running.
pub fn cost_estimate(domain: &RectDomain, cfg: &Solve2dConfig, lip: f64) -> (f64, f64) {
    let dt = stable_dt(domain, cfg, lip);
    let steps = (cfg.t_end / dt).ceil();
    (steps, steps * domain.n_open() as f64)
}

fn stable_dt(d: &RectDomain, cfg: &Solve2dConfig, lip: f64) -> f64 {
    0.9 / (1.0 / (d.dx * d.dx) + 1.0 / (cfg.eps * cfg.eps * d.dz * d.dz) + cfg.shear.abs() / d.dx + lip)
}

/// Solves from `u(0, x, z) = g(x)`.
pub fn solve_2d(shape: &ChannelShape, g: &dyn Fn(f64) -> f64, f: &dyn Reaction, cfg: &Solve2dConfig) -> Result<EpsSolution> {
    if !(cfg.eps > 0.0 && cfg.eps <= 1.0) {
        return Err(Error::Param(format!("ε = {} outside (0, 1]", cfg.eps)));
    }
    if !(cfg.t_end > 0.0 && cfg.snapshot_every > 0.0) {
        return Err(Error::Param("t_end and snapshot_every must be positive".into()));
    }
    let (dom, graph) = RectDomain::new(shape, cfg.grid)?;
    let n = dom.n_open();
    let dt_max = cfg.dt.unwrap_or_else(|| stable_dt(&dom, cfg, f.lipschitz()));
    let per = (cfg.snapshot_every / dt_max).ceil() as usize;
    let dt = cfg.snapshot_every / per as f64;
    let n_snap = (cfg.t_end / cfg.snapshot_every).round() as usize;
    let cx = 0.5 / (dom.dx * dom.dx);
    let cz = 0.5 / (cfg.eps * cfg.eps * dom.dz * dom.dz);
    let shear: Vec<f64> = (0..n)
        .map(|c| {
            if cfg.shear == 0.0 || graph.edges[dom.loc[c].0].kind != EdgeKind::Spine {
                return 0.0;
            }
            let (x, z) = dom.center(c);
            let w = shape.spine_width(x).unwrap_or(1.0);
            cfg.shear * (std::f64::consts::PI * z / w).cos()
        })
        .collect();
    let mut u: Vec<f64> = (0..n).map(|c| g(dom.center(c).0)).collect();
    let bounded = u.iter().all(|v| (0.0..=1.0).contains(v));
    let mut next = vec![0.0; n];
    let mut snapshots = vec![Snapshot2d { t: 0.0, u: u.clone() }];
    let mut steps = 0;
    for s in 1..=n_snap {
        for _ in 0..per {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in 0..n {
                let uc = u[c];
                let [e, w, no, so] = dom.nbr[c];
                let mut acc = 0.0;
                if e != NONE {
                    acc += cx * (u[e as usize] - uc);
                }
                if w != NONE {
                    acc += cx * (u[w as usize] - uc);
                }
                if no != NONE {
                    acc += cz * (u[no as usize] - uc);
                }
                if so != NONE {
                    acc += cz * (u[so as usize] - uc);
                }
                let v = shear[c];
                if v > 0.0 && e != NONE {
                    acc += v * (u[e as usize] - uc) / dom.dx;
                } else if v < 0.0 && w != NONE {
                    acc += v * (uc - u[w as usize]) / dom.dx;
                }
                let nv = uc + dt * (acc + f.f(uc));
                lo = lo.min(nv);
                hi = hi.max(nv);
                next[c] = nv;
            }
            std::mem::swap(&mut u, &mut next);
            steps += 1;
            if !lo.is_finite() || !hi.is_finite() || (bounded && (lo < -1e-12 || hi > 1.0 + 1e-12)) {
                return Err(Error::Stability { t: steps as f64 * dt, value: if lo < 0.0 { lo } else { hi } });
            }
        }
        snapshots.push(Snapshot2d { t: s as f64 * cfg.snapshot_every, u: u.clone() });
    }
    Ok(EpsSolution { eps: cfg.eps, domain: dom, graph, snapshots, dt, steps })
}

impl EpsSolution {
    /// `(t, x, z, u)` for every open cell of every snapshot.
    pub fn snapshot_table(&self) -> Table {
        let mut t = Table::new(&["t", "x", "z", "u"]);
        for s in &self.snapshots {
            for c in 0..self.domain.n_open() {
                let (x, z) = self.domain.center(c);
                t.push_f64(&[s.t, x, z, s.u[c]]);
            }
        }
        t
    }

    /// Cross-section averages in the graph snapshot schema `(t, edge, x, u)`.
    pub fn average_table(&self) -> Table {
        let mut t = Table::new(&["t", "edge", "x", "u"]);
        for s in &self.snapshots {
            for (e, i, v) in self.domain.averages(&s.u) {
                let x = self.domain.x0 + (i as f64 + 0.5) * self.domain.dx;
                t.push(vec![s.t.to_string(), self.domain.edge_ids[e].to_string(), x.to_string(), v.to_string()]);
            }
        }
        t
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub eps: f64,
    pub times: Vec<f64>,
    /// `max |u^ε - u∘ı|` over the open cells at each time.
    pub errors: Vec<f64>,
    pub sup: f64,
    pub warnings: Vec<String>,
}

impl Comparison {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["eps", "t", "sup_error"]);
        for (a, b) in self.times.iter().zip(&self.errors) {
            t.push_f64(&[self.eps, *a, *b]);
        }
        t
    }
}

/// Sup-error between the 2D solution and the graph solution on the same
/// shape. Graph snapshots are matched by time, with linear interpolation in
/// time (and a warning) when they do not line up.
pub fn compare_graph(sol: &EpsSolution, graph_sol: &GraphSolution) -> Result<Comparison> {
    let grid = &graph_sol.grid;
    if grid.edge_ids != sol.domain.edge_ids {
        return Err(Error::Param("graph solution belongs to a different shape".into()));
    }
    let gs = &graph_sol.snapshots;
    let mut warnings = Vec::new();
    let mut times = Vec::new();
    let mut errors = Vec::new();
    for s in &sol.snapshots {
        let k = gs.partition_point(|g| g.t < s.t - 1e-9);
        let ug: Vec<f64> = if k < gs.len() && (gs[k].t - s.t).abs() <= 1e-9 {
            gs[k].u.clone()
        } else if k > 0 && k < gs.len() {
            warnings.push(format!("no graph snapshot at t = {}; interpolating in time", s.t));
            let w = (s.t - gs[k - 1].t) / (gs[k].t - gs[k - 1].t);
            gs[k - 1].u.iter().zip(&gs[k].u).map(|(a, b)| (1.0 - w) * a + w * b).collect()
        } else {
            return Err(Error::Domain(format!("t = {} outside the graph solution", s.t)));
        };
        let err = (0..sol.domain.n_open())
            .map(|c| {
                let (e, x) = sol.domain.loc[c];
                (s.u[c] - grid.interpolate(&ug, e, x)).abs()
            })
            .fold(0.0, f64::max);
        times.push(s.t);
        errors.push(err);
    }
    let sup = errors.iter().copied().fold(0.0, f64::max);
    Ok(Comparison { eps: sol.eps, times, errors, sup, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, GeneratorParams};
    use crate::reaction::{Kpp, NoReaction};

    fn bump(x: f64) -> f64 {
        if x.abs() < 2.0 {
            0.5 * (1.0 + (std::f64::consts::PI * x / 2.0).cos())
        } else {
            0.0
        }
    }

    #[test]
    fn flat_is_separable() {
        let shape = ChannelShape::flat(1.0, 1.0, 4);
        let cfg = Solve2dConfig { eps: 0.4, t_end: 0.5, snapshot_every: 0.25, dt: Some(1e-4), ..Default::default() };
        let s = solve_2d(&shape, &bump, &Kpp::default(), &cfg).unwrap();
        assert_eq!(s.domain.omitted_wings, 8);
        let one_row = Solve2dConfig { grid: Grid2d { dx: 0.0625, dz: 1.0 }, ..cfg.clone() };
        let r = solve_2d(&shape, &bump, &Kpp::default(), &one_row).unwrap();
        let u = &s.snapshots.last().unwrap().u;
        let v = &r.snapshots.last().unwrap().u;
        assert_eq!(s.domain.oscillation(u), 0.0);
        for (c, &(i, _)) in s.domain.cells.iter().enumerate() {
            assert!((u[c] - v[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn winged_mass_conserved() {
        let shape = sample_channel(&GeneratorParams::rectangular(), 3, 2).unwrap();
        let cfg = Solve2dConfig { eps: 0.4, t_end: 0.5, snapshot_every: 0.25, ..Default::default() };
        let s = solve_2d(&shape, &bump, &NoReaction, &cfg).unwrap();
        let m0 = s.domain.total_mass(&s.snapshots[0].u);
        let m1 = s.domain.total_mass(&s.snapshots.last().unwrap().u);
        assert!((m0 - m1).abs() < 1e-8 * m0);
        assert!(s.domain.n_open() > 0);
    }
}
