//! Sturm–Liouville solutions on edges, junction transfer matrices and
//! hitting-time transforms along the spine.
//!
//! On an edge with width `l`, the generator is `D_m D_p` with `dp = dx/l`
//! and `dm = 2l dx`. The fundamental solution solves `D_m D_p u = κ u` with
//! `u(0) = 1`, `D_p u(0) = 0`. Hitting transforms `E e^{λT}` with `λ ≤ 0`
//! use `κ = -λ`.

use rayon::prelude::*;

use crate::channel::{Cell, ChannelShape, Side};
use crate::error::{Error, Result};
use crate::num::cheb::{self, Cheb};
use crate::num::ode::{self, Tolerance};
use crate::output::Table;
use crate::profile::Width;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Series,
    #[default]
    Ode,
}

/// Integration variable for one edge traversed from a chosen end.
///
/// Smooth profiles use the distance `ξ` from the origin end. Vanishing-tip
/// profiles use the scale coordinate `σ = p(ξ)`, in which the width is a
/// regular function and the tip is at finite σ.
#[derive(Clone, Copy)]
struct Param<'a> {
    w: &'a dyn Width,
    from_end: bool,
    /// `(scale, beta)` for tip profiles.
    tip: Option<(f64, f64)>,
    sigma_len: f64,
}

impl<'a> Param<'a> {
    fn new(w: &'a dyn Width, from_end: bool) -> Self {
        let len = w.length();
        match w.tip() {
            Some((s, b)) => {
                Param { w, from_end, tip: Some((s, b)), sigma_len: len.powf(1.0 - b) / (s * (1.0 - b)) }
            }
            None => Param { w, from_end, tip: None, sigma_len: len },
        }
    }

    fn width_at_xi(&self, xi: f64) -> f64 {
        let len = self.w.length();
        self.w.width(if self.from_end { len - xi } else { xi })
    }

    /// Tip distance at σ (tip profiles only).
    fn tip_distance(&self, sigma: f64) -> f64 {
        let (s, b) = self.tip.expect("tip profile");
        let e = 1.0 - b;
        let len = self.w.length();
        let base = if self.from_end { s * e * sigma } else { len.powf(e) - s * e * sigma };
        base.max(0.0).powf(1.0 / e)
    }

    /// `(l, dm/dσ, dp/dσ)` at σ.
    fn coeffs(&self, sigma: f64) -> (f64, f64, f64) {
        match self.tip {
            None => {
                let l = self.width_at_xi(sigma);
                (l, 2.0 * l, 1.0 / l)
            }
            Some((s, b)) => {
                let l = s * self.tip_distance(sigma).powf(b);
                (l, 2.0 * l * l, 1.0)
            }
        }
    }

    fn sigma_of_xi(&self, xi: f64) -> f64 {
        match self.tip {
            None => xi,
            Some((s, b)) => {
                let len = self.w.length();
                let e = 1.0 - b;
                if self.from_end {
                    xi.max(0.0).powf(e) / (s * e)
                } else {
                    (len.powf(e) - (len - xi).max(0.0).powf(e)) / (s * e)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub u: f64,
    /// `D_p u = l du/dξ`.
    pub dpu: f64,
    /// `S(ξ) = ∫_0^ξ u^{-2} dp`; NaN for λ < 0.
    pub s: f64,
}

enum Repr {
    Ode { knots: Vec<(f64, [f64; 3])> },
    Series { cheb: Cheb, u: Vec<f64>, dpu: Vec<f64>, s: Vec<f64> },
}

/// Fundamental solution on one edge, integrated from its start
/// (`from_end = false`) or its end.
pub struct FundamentalSolution<'a> {
    pub lambda: f64,
    pub method: Method,
    param: Param<'a>,
    repr: Repr,
    end: Point,
}

pub const ODE_TOL: Tolerance = Tolerance { rtol: 1e-11, atol: 1e-14 };
pub const SERIES_NODES: usize = 64;
/// Largest `|λ| p m` accepted by the series method.
pub const SERIES_BOUND: f64 = 200.0;

// S is only tracked for λ ≥ 0, where u ≥ 1 has no zeros.
fn rhs(param: &Param, lambda: f64, sigma: f64, y: &[f64; 3]) -> [f64; 3] {
    let (_, dm, dp) = param.coeffs(sigma);
    let ds = if lambda >= 0.0 { dp / (y[0] * y[0]) } else { 0.0 };
    [y[1] * dp, lambda * dm * y[0], ds]
}

fn mask_s(lambda: f64, s: f64) -> f64 {
    if lambda >= 0.0 {
        s
    } else {
        f64::NAN
    }
}

fn ode_err(e: ode::OdeError) -> Error {
    Error::Ode(format!("{e:?}"))
}

/// Solves `D_m D_p u = λu`, `u(0) = 1`, `D_p u(0) = 0` on an edge.
pub fn fundamental(w: &dyn Width, lambda: f64, method: Method) -> Result<FundamentalSolution<'_>> {
    fundamental_from(w, false, lambda, method)
}

/// As [`fundamental`], with the origin at the edge's far end when `from_end`.
pub fn fundamental_from(w: &dyn Width, from_end: bool, lambda: f64, method: Method) -> Result<FundamentalSolution<'_>> {
    if !(w.length() > 0.0) {
        return Err(Error::Domain("edge length must be positive".into()));
    }
    let param = Param::new(w, from_end);
    match method {
        Method::Ode => {
            let mut knots = Vec::new();
            let y = ode::integrate(
                |s, y| rhs(&param, lambda, s, y),
                0.0,
                [1.0, 0.0, 0.0],
                param.sigma_len,
                ODE_TOL,
                Some(&mut knots),
            )
            .map_err(ode_err)?;
            Ok(FundamentalSolution {
                lambda,
                method,
                param,
                repr: Repr::Ode { knots },
                end: Point { u: y[0], dpu: y[1], s: mask_s(lambda, y[2]) },
            })
        }
        Method::Series => series(param, lambda),
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn series(param: Param<'_>, lambda: f64) -> Result<FundamentalSolution<'_>> {
    let ch = Cheb::new(SERIES_NODES, 0.0, param.sigma_len);
    let (dm, dp): (Vec<f64>, Vec<f64>) = ch
        .nodes
        .iter()
        .map(|&s| {
            let (_, a, b) = param.coeffs(s);
            (a, b)
        })
        .unzip();
    let p_len = pairwise_last(&ch.cumulative(&dp));
    let m_len = pairwise_last(&ch.cumulative(&dm));
    let product = lambda.abs() * p_len * m_len;
    if product > SERIES_BOUND {
        return Err(Error::SeriesDivergence { term: 0, product });
    }
    let n = ch.nodes.len();
    let mut u = vec![1.0; n];
    let mut v = vec![0.0; n];
    let mut term = vec![1.0; n];
    let mut largest: f64 = 1.0;
    let mut converged = lambda == 0.0;
    for k in 1..400 {
        if converged {
            break;
        }
        let w: Vec<f64> = term.iter().zip(&dm).map(|(t, d)| t * d).collect();
        let dterm: Vec<f64> = ch.cumulative(&w).iter().map(|x| lambda * x).collect();
        let g: Vec<f64> = dterm.iter().zip(&dp).map(|(t, d)| t * d).collect();
        term = ch.cumulative(&g);
        for i in 0..n {
            u[i] += term[i];
            v[i] += dterm[i];
        }
        let (tu, tv) = (sup(&term), sup(&dterm));
        largest = largest.max(tu);
        if !tu.is_finite() || !sup(&u).is_finite() {
            return Err(Error::SeriesDivergence { term: k, product });
        }
        if tu < 1e-14 * sup(&u) && tv <= 1e-14 * sup(&v).max(f64::MIN_POSITIVE) {
            converged = true;
        }
    }
    // Cancellation would leave the sum dominated by rounding of large terms.
    if !converged || largest > 1e6 * sup(&u) {
        return Err(Error::SeriesDivergence { term: 400, product });
    }
    let inv: Vec<f64> = u.iter().zip(&dp).map(|(x, d)| mask_s(lambda, d / (x * x))).collect();
    let s = ch.cumulative(&inv);
    let end = Point { u: u[n - 1], dpu: v[n - 1], s: s[n - 1] };
    Ok(FundamentalSolution {
        lambda,
        method: Method::Series,
        param,
        repr: Repr::Series { u: cheb::coeffs(&u), dpu: cheb::coeffs(&v), s: cheb::coeffs(&s), cheb: ch },
        end,
    })
}

fn pairwise_last(v: &[f64]) -> f64 {
    *v.last().expect("non-empty")
}

impl FundamentalSolution<'_> {
    /// Edge length.
    pub fn length(&self) -> f64 {
        self.param.w.length()
    }

    /// Values at the far end.
    pub fn end(&self) -> Point {
        self.end
    }

    /// Width at local coordinate ξ (distance from the origin end).
    pub fn width(&self, xi: f64) -> f64 {
        self.param.width_at_xi(xi)
    }

    /// Values at local coordinate ξ.
    pub fn at(&self, xi: f64) -> Result<Point> {
        let len = self.length();
        if !(xi >= 0.0 && xi <= len * (1.0 + 1e-14)) {
            return Err(Error::Domain(format!("ξ = {xi} outside [0, {len}]")));
        }
        let sigma = self.param.sigma_of_xi(xi.min(len)).min(self.param.sigma_len);
        match &self.repr {
            Repr::Ode { knots } => {
                let i = knots.partition_point(|k| k.0 <= sigma).saturating_sub(1);
                let (s0, y0) = knots[i];
                let y = ode::integrate(|s, y| rhs(&self.param, self.lambda, s, y), s0, y0, sigma, ODE_TOL, None)
                    .map_err(ode_err)?;
                Ok(Point { u: y[0], dpu: y[1], s: mask_s(self.lambda, y[2]) })
            }
            Repr::Series { cheb: ch, u, dpu, s } => {
                let t = ch.to_unit(sigma);
                Ok(Point { u: cheb::clenshaw(u, t), dpu: cheb::clenshaw(dpu, t), s: cheb::clenshaw(s, t) })
            }
        }
    }

    /// Max of `|D_m D_p u - λu|` over `n` interior points, from a centred
    /// difference of `D_p u` in the m-coordinate.
    pub fn residual(&self, n: usize) -> Result<f64> {
        let len = self.length();
        let mut worst: f64 = 0.0;
        for i in 1..n {
            let xi = len * i as f64 / n as f64;
            let h = 1e-4 * len;
            let a = self.at(xi - h)?;
            let b = self.at(xi + h)?;
            let c = self.at(xi)?;
            let dm = 2.0 * crate::num::quad::integrate(|x| self.width(x), xi - h, xi + h, 1e-12, 0.0).0;
            let r = (b.dpu - a.dpu) / dm - self.lambda * c.u;
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }
}

// ---------------------------------------------------------------------------
// Basic pair

/// Solutions with `u₊(0) = 0, u₊(r) = 1` and `u₋(0) = 1, u₋(r) = 0`,
/// built from the fundamental solution by reduction of order.
pub struct BasicPair<'a> {
    pub fundamental: FundamentalSolution<'a>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairValue {
    pub u_plus: f64,
    pub u_minus: f64,
    pub dpu_plus: f64,
    pub dpu_minus: f64,
    /// x-derivatives `D_p u / l`.
    pub du_plus: f64,
    pub du_minus: f64,
}

/// Endpoint D_p derivatives of the basic pair from end values `(U, V, S)` of
/// a fundamental solution: `[(D_p u₊(0), D_p u₊(r)), (D_p u₋(0), D_p u₋(r))]`.
pub fn pair_endpoint_dp(e: Point) -> [(f64, f64); 2] {
    let (u, v, s) = (e.u, e.dpu, e.s);
    [(1.0 / (u * s), (v * s + 1.0 / u) / (u * s)), (-1.0 / s, -1.0 / (u * s))]
}

pub fn basic_pair(w: &dyn Width, lambda: f64, method: Method) -> Result<BasicPair<'_>> {
    if !(w.length() > 0.0) {
        return Err(Error::Domain("degenerate edge (r = 0)".into()));
    }
    Ok(BasicPair { fundamental: fundamental(w, lambda, method)? })
}

impl BasicPair<'_> {
    pub fn at(&self, xi: f64) -> Result<PairValue> {
        let f = &self.fundamental;
        let p = f.at(xi)?;
        let e = f.end();
        let l = f.width(xi);
        let dpu_plus = (p.dpu * p.s + 1.0 / p.u) / (e.u * e.s);
        let dpu_minus = (p.dpu * (e.s - p.s) - 1.0 / p.u) / e.s;
        Ok(PairValue {
            u_plus: p.u * p.s / (e.u * e.s),
            u_minus: p.u * (e.s - p.s) / e.s,
            dpu_plus,
            dpu_minus,
            du_plus: dpu_plus / l,
            du_minus: dpu_minus / l,
        })
    }
}

// ---------------------------------------------------------------------------
// Transfer cells

/// End values of a fundamental solution plus the widths at both ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeEnds {
    pub end: Point,
    pub l_origin: f64,
    pub l_end: f64,
}

pub fn edge_ends(w: &dyn Width, from_end: bool, kappa: f64, method: Method, l_start: f64, l_stop: f64) -> Result<EdgeEnds> {
    let f = fundamental_from(w, from_end, kappa, method)?;
    let (l_origin, l_end) = if from_end { (l_stop, l_start) } else { (l_start, l_stop) };
    Ok(EdgeEnds { end: f.end(), l_origin, l_end })
}

/// Solutions needed from one cell at a given κ: the spine from its start and
/// the wing from its attachment (`r > 0`) or its tip (`r < 0`).
#[derive(Clone, Copy, Debug)]
pub struct CellEnds {
    pub spine: EdgeEnds,
    pub wing: EdgeEnds,
}

pub fn cell_ends(c: &Cell, kappa: f64, method: Method) -> Result<CellEnds> {
    let spine = edge_ends(
        &c.spine_profile,
        false,
        kappa,
        method,
        c.spine_profile.start_width(),
        c.spine_profile.end_width(),
    )?;
    let wing = edge_ends(&c.wing_profile, c.wing_r < 0.0, kappa, method, c.gamma, c.wing_profile.end_width())?;
    Ok(CellEnds { spine, wing })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferCell {
    pub k: usize,
    pub lambda: f64,
    /// From the basic-pair junction equation.
    pub x: f64,
    pub y: f64,
    /// From the closed S-forms.
    pub x_s: f64,
    pub y_s: f64,
    /// `S` of the left spine, the wing (signed by `r`) and the right spine.
    pub s_left: f64,
    pub s_wing: f64,
    pub s_right: f64,
}

const IDENTITY_TOL: f64 = 1e-9;

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Transfer entries at junction `k` (1-based) in outward orientation.
///
/// `left` is the spine ending at the junction, `right` the next spine.
pub fn transfer_cell(k: usize, lambda: f64, left_cell: &Cell, left: CellEnds, right: &EdgeEnds) -> Result<TransferCell> {
    let (alpha, beta, gamma, r) = (left_cell.alpha, left_cell.beta, left_cell.gamma, left_cell.wing_r);
    let l = left.spine;
    let w = left.wing;
    let (ul, vl, sl) = (l.end.u, l.end.dpu, l.end.s);
    let (ur, sr) = (right.end.u, right.end.s);
    let (uw, vw, sw) = (w.end.u, w.end.dpu, w.end.s);
    let l_lend = l.l_end;
    let l_r0 = right.l_origin;

    // Basic-pair route.
    let [lp, lm] = pair_endpoint_dp(l.end);
    let [rp, rm] = pair_endpoint_dp(right.end);
    let [wp, wm] = pair_endpoint_dp(w.end);
    let du_minus_l = lm.1 / l_lend;
    let du_plus_l = lp.1 / l_lend;
    let du_plus_r = rp.0 / l_r0;
    let du_minus_r = rm.0 / l_r0;
    let x = beta / alpha * du_plus_r / du_minus_l;
    let wing_term = if r > 0.0 {
        let l_att = w.l_origin;
        let (du_minus_att, du_plus_att) = (wm.0 / l_att, wp.0 / l_att);
        gamma / alpha * (du_minus_att - wm.1 / wp.1 * du_plus_att) / du_minus_l
    } else {
        // Pair on [tip, attachment]: index 0 is the tip.
        let l_att = w.l_end;
        let (du_plus_att, du_minus_att) = (wp.1 / l_att, wm.1 / l_att);
        -gamma / alpha * (du_plus_att - wp.0 / wm.0 * du_minus_att) / du_minus_l
    };
    let y = -du_plus_l / du_minus_l + wing_term + beta / alpha * du_minus_r / du_minus_l;

    // Closed S-forms.
    let x_s = -ul * sl / (ur * sr);
    let base = 1.0 / ul + alpha * (vl / l_lend) * sl + ul * sl / sr;
    let y_s = if r > 0.0 {
        base + ul * sl * uw * vw / (uw * vw * sw + 1.0)
    } else {
        base + gamma * (ul / uw) * (vw / w.l_end) * sl
    };

    if rel_diff(x, x_s) > IDENTITY_TOL {
        return Err(Error::Consistency { what: format!("x_{k} (junction vs S-form)"), a: x, b: x_s });
    }
    if rel_diff(y, y_s) > IDENTITY_TOL {
        return Err(Error::Consistency { what: format!("y_{k} (junction vs S-form)"), a: y, b: y_s });
    }
    if !(x < 0.0) || !(y >= 1.0 - 1e-12) {
        return Err(Error::Consistency { what: format!("sign bounds x_{k} < 0, y_{k} >= 1"), a: x, b: y });
    }
    Ok(TransferCell { k, lambda, x, y, x_s, y_s, s_left: sl, s_wing: r.signum() * sw, s_right: sr })
}

/// Transfer entries at the junction of `cells[0]`, using `cells[1]`'s spine.
/// `lambda ≤ 0` is the hitting parameter.
pub fn cell_matrix(cells: [&Cell; 2], lambda: f64, method: Method) -> Result<TransferCell> {
    if lambda > 0.0 {
        return Err(Error::Domain(format!("λ = {lambda} > 0")));
    }
    let a = cell_ends(cells[0], -lambda, method)?;
    let b = cell_ends(cells[1], -lambda, method)?;
    transfer_cell(1, lambda, cells[0], a, &b.spine)
}

// ---------------------------------------------------------------------------
// Hitting transforms

#[derive(Debug, Clone, Copy)]
pub struct DepthPolicy {
    /// Number of leading ratios to report; `None` means every cell of the shape.
    pub report: Option<usize>,
    /// Cells beyond the report depth at the first attempt.
    pub initial_extra: usize,
    pub max_depth: usize,
    pub tol: f64,
    /// Use exactly this many spine segments with an absorbing far end.
    pub fixed: Option<usize>,
    pub method: Method,
}

impl Default for DepthPolicy {
    fn default() -> Self {
        Self { report: None, initial_extra: 64, max_depth: 1 << 17, tol: 1e-12, fixed: None, method: Method::Ode }
    }
}

#[derive(Debug, Clone)]
pub struct TransformResult {
    pub lambda: f64,
    pub direction: Side,
    /// `ρ_k = E e^{λ T}` for crossing cell `k` starting at its inner end.
    pub rho: Vec<f64>,
    pub log_sum: f64,
    pub depth: usize,
    /// Spine lengths of the reported cells.
    pub lengths: Vec<f64>,
    pub cells: Vec<TransferCell>,
}

impl TransformResult {
    /// `E e^{λ T}` to reach the end of cell `j` (1-based) from the origin.
    pub fn transform_to(&self, j: usize) -> f64 {
        self.rho[..j].iter().map(|r| r.ln()).sum::<f64>().exp()
    }

    pub fn cells_table(&self) -> Table {
        let mut t = Table::new(&["k", "x_k", "y_k", "rho_k", "ln_rho_k"]);
        for (c, r) in self.cells.iter().zip(&self.rho) {
            t.push(vec![c.k.to_string(), c.x.to_string(), c.y.to_string(), r.to_string(), r.ln().to_string()]);
        }
        t
    }
}

/// Lazily computed per-cell solutions for one side and one λ.
struct Chain {
    shape: ChannelShape,
    side: Side,
    cells: Vec<Cell>,
    ends: Vec<CellEnds>,
    transfer: Vec<TransferCell>,
    kappa: f64,
    lambda: f64,
    method: Method,
}

impl Chain {
    fn can_extend(&self) -> bool {
        self.shape.params.is_some()
    }

    /// Makes junction data available for `n` spine segments.
    fn ensure(&mut self, n: usize) -> Result<usize> {
        if self.cells.len() < n && self.can_extend() {
            self.shape = self.shape.extended(n)?;
            self.cells = self.shape.outward(self.side);
        }
        let n = n.min(self.cells.len());
        if self.ends.len() < n {
            let (kappa, method) = (self.kappa, self.method);
            let new: Vec<CellEnds> = self.cells[self.ends.len()..n]
                .par_iter()
                .map(|c| cell_ends(c, kappa, method))
                .collect::<Result<_>>()?;
            self.ends.extend(new);
        }
        while self.transfer.len() + 1 < n {
            let k = self.transfer.len();
            let t = transfer_cell(k + 1, self.lambda, &self.cells[k], self.ends[k], &self.ends[k + 1].spine)?;
            self.transfer.push(t);
        }
        Ok(n)
    }

    /// Ratios for `n` spine segments with an absorbing far end.
    fn ratios(&self, n: usize) -> Vec<f64> {
        let mut rho = vec![0.0; n];
        let mut next = 0.0;
        for k in (0..n).rev() {
            rho[k] = if k + 1 == n {
                0.0
            } else {
                let t = &self.transfer[k];
                1.0 / (t.x * next + t.y)
            };
            next = rho[k];
        }
        rho
    }
}

/// `E e^{λ T}` ratios for successive cells in `direction`, from a backward
/// ratio recursion truncated with an absorbing end and doubled in depth
/// until the reported ratios settle.
pub fn hitting_transform(shape: &ChannelShape, lambda: f64, direction: Side, policy: &DepthPolicy) -> Result<TransformResult> {
    if !(lambda <= 0.0) {
        return Err(Error::Domain(format!("hitting transform needs λ ≤ 0, got {lambda}")));
    }
    let avail = shape.n_cells(direction);
    let report = policy.fixed.map(|f| f.saturating_sub(1)).or(policy.report).unwrap_or(avail).max(1);
    let mut chain = Chain {
        shape: shape.clone(),
        side: direction,
        cells: shape.outward(direction),
        ends: Vec::new(),
        transfer: Vec::new(),
        kappa: -lambda,
        lambda,
        method: policy.method,
    };
    let lengths_of = |cells: &[Cell], n: usize| cells[..n].iter().map(|c| c.spine_length).collect::<Vec<_>>();
    if lambda == 0.0 {
        let n = report.min(if chain.can_extend() { report } else { avail });
        let n = chain.ensure(n)?;
        return Ok(TransformResult {
            lambda,
            direction,
            rho: vec![1.0; n],
            log_sum: 0.0,
            depth: 0,
            lengths: lengths_of(&chain.cells, n),
            cells: Vec::new(),
        });
    }
    if let Some(f) = policy.fixed {
        let n = chain.ensure(f)?;
        if n < f {
            return Err(Error::Domain(format!("fixed depth {f} exceeds the {n} available cells")));
        }
        let rho = chain.ratios(n);
        let d = n - 1;
        return Ok(finish(lambda, direction, rho[..d].to_vec(), n, lengths_of(&chain.cells, d), &chain.transfer[..d]));
    }
    let extendable = chain.can_extend();
    let report = if extendable { report } else { report.min(avail.saturating_sub(1)).max(1) };
    let mut depth = report + policy.initial_extra.max(2);
    if !extendable {
        depth = depth.min(report + 1 + (avail - report - 1) / 2);
    }
    let mut depth_used = chain.ensure(depth)?;
    let mut prev = chain.ratios(depth_used);
    loop {
        let next_depth = (2 * depth).min(policy.max_depth);
        let got = chain.ensure(next_depth)?;
        if got <= depth_used {
            return Err(Error::Truncation { depth: depth_used, change: f64::INFINITY });
        }
        let rho = chain.ratios(got);
        let d = report.min(depth_used - 1);
        let change = prev[..d].iter().zip(&rho[..d]).map(|(a, b)| rel_diff(*a, *b)).fold(0.0, f64::max);
        // Truncation error decays geometrically in the extra depth, so at the
        // last available cell the error is about the square of `change`.
        let last = !extendable && got == avail;
        let tol = if last { policy.tol.sqrt() } else { policy.tol };
        if change < tol && d == report {
            return Ok(finish(lambda, direction, rho[..d].to_vec(), got, lengths_of(&chain.cells, d), &chain.transfer[..d]));
        }
        if next_depth >= policy.max_depth {
            return Err(Error::Truncation { depth: got, change });
        }
        prev = rho;
        depth_used = got;
        depth = next_depth;
    }
}

fn finish(lambda: f64, direction: Side, rho: Vec<f64>, depth: usize, lengths: Vec<f64>, cells: &[TransferCell]) -> TransformResult {
    let logs: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
    TransformResult {
        lambda,
        direction,
        log_sum: crate::num::stats::pairwise_sum(&logs),
        rho,
        depth,
        lengths,
        cells: cells.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Closed-form spine formulas

fn check_range(x: f64, a: f64) -> Result<()> {
    if !(x > 0.0 && x < a) {
        return Err(Error::Domain(format!("need 0 < x < A, got x = {x}, A = {a}")));
    }
    Ok(())
}

/// Probability that the spine diffusion started at `x` reaches 0 before `A`:
/// `1 - p(x)/p(A)` with `p(x) = ∫_0^x dy/l₀`.
pub fn hit_probability(shape: &ChannelShape, x: f64, a: f64) -> Result<f64> {
    check_range(x, a)?;
    Ok(1.0 - shape.spine_scale(x)? / shape.spine_scale(a)?)
}

/// Expected exit time from `(0, A)` of the spine-only diffusion from `x`:
/// `v(x) = -2∫_0^x M/l₀ + 2 (∫_0^A M/l₀ / p(A)) p(x)` with `M(y) = ∫_0^y l₀`.
pub fn expected_exit_time(shape: &ChannelShape, x: f64, a: f64) -> Result<f64> {
    check_range(x, a)?;
    let (_, right) = shape.extent();
    if a > right * (1.0 + 1e-14) {
        return Err(Error::Domain(format!("A = {a} beyond the channel end {right}")));
    }
    // Accumulate p and ∫M/l₀ cell by cell.
    let mut pos = 0.0;
    let mut mass = 0.0;
    let mut p_acc = 0.0;
    let mut g_acc = 0.0;
    let mut at_x = None;
    for c in &shape.positive {
        let l = &c.spine_profile;
        let seg_end = pos + c.spine_length;
        let mass0 = mass;
        let inner = |y: f64| mass0 + crate::num::quad::integrate(|t| l.width(t), 0.0, y, 1e-13, 0.0).0;
        let piece = |hi: f64| {
            let p = crate::num::quad::integrate(|t| 1.0 / l.width(t), 0.0, hi, 1e-13, 0.0).0;
            let g = crate::num::quad::integrate(|t| inner(t) / l.width(t), 0.0, hi, 1e-12, 0.0).0;
            (p, g)
        };
        if at_x.is_none() && x <= seg_end {
            let (p, g) = piece(x - pos);
            at_x = Some((p_acc + p, g_acc + g));
        }
        if a <= seg_end {
            let (p, g) = piece(a - pos);
            let (px, gx) = at_x.expect("x < A");
            let (pa, ga) = (p_acc + p, g_acc + g);
            return Ok(-2.0 * gx + 2.0 * ga / pa * px);
        }
        let (p, g) = piece(c.spine_length);
        p_acc += p;
        g_acc += g;
        mass = inner(c.spine_length);
        pos = seg_end;
    }
    Err(Error::Domain(format!("A = {a} beyond the channel end")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, GeneratorParams};
    use crate::profile::{Exponential, WidthProfile};

    #[test]
    fn constant_width_cosh() {
        let w = WidthProfile::constant(1.0, 1.0);
        for m in [Method::Ode, Method::Series] {
            let f = fundamental(&w, 0.5, m).unwrap();
            let p = f.at(1.0).unwrap();
            assert!((p.u - 1f64.cosh()).abs() < 1e-10, "{m:?}");
            assert!((p.dpu - 1f64.sinh()).abs() < 1e-10, "{m:?}");
        }
    }

    #[test]
    fn exponential_width_closed_form() {
        // ½u'' + u' = 1.5 u  →  roots 1, -3
        let w = Exponential { scale: 1.0, rate: 2.0, length: 1.0 };
        let exact = (3.0 * 1f64.exp() + (-3f64).exp()) / 4.0;
        for m in [Method::Ode, Method::Series] {
            let f = fundamental(&w, 1.5, m).unwrap();
            assert!((f.end().u - exact).abs() < 1e-9, "{m:?} {}", f.end().u);
        }
    }

    #[test]
    fn zero_lambda_trivial() {
        let w = WidthProfile::trig(0.8, 1.1, &[0.05], 1.4);
        for m in [Method::Ode, Method::Series] {
            let f = fundamental(&w, 0.0, m).unwrap();
            let p = f.at(0.7).unwrap();
            assert!((p.u - 1.0).abs() < 1e-14 && p.dpu.abs() < 1e-14);
        }
    }

    #[test]
    fn basic_pair_constant_width() {
        let w = WidthProfile::constant(1.0, 1.0);
        let bp = basic_pair(&w, 0.5, Method::Ode).unwrap();
        let v = bp.at(0.5).unwrap();
        assert!((v.u_plus - 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-10);
        let a = bp.at(0.0).unwrap();
        let b = bp.at(1.0).unwrap();
        assert!(a.u_plus.abs() < 1e-14 && (a.u_minus - 1.0).abs() < 1e-14);
        assert!((b.u_plus - 1.0).abs() < 1e-12 && b.u_minus.abs() < 1e-12);
    }

    #[test]
    fn residual_small() {
        let w = WidthProfile::trig(0.8, 1.2, &[0.05, -0.03], 1.3);
        let f = fundamental(&w, 0.7, Method::Ode).unwrap();
        assert!(f.residual(10).unwrap() < 1e-5);
    }

    #[test]
    fn zero_lambda_fixes_unit_ratios() {
        let s = sample_channel(&GeneratorParams::default(), 3, 4).unwrap();
        let t = cell_matrix([&s.positive[0], &s.positive[1]], 0.0, Method::Ode).unwrap();
        assert!((t.y - (1.0 + t.s_left / t.s_right)).abs() < 1e-12);
        assert!((t.x + t.s_left / t.s_right).abs() < 1e-12);
        assert!((1.0 / (t.x + t.y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_transform_is_brownian() {
        let s = ChannelShape::flat(1.0, 1.0, 60);
        let r = hitting_transform(&s, -0.5, Side::Plus, &DepthPolicy { report: Some(3), ..Default::default() }).unwrap();
        assert!((r.rho[0] - (-1f64).exp()).abs() < 1e-9, "{}", r.rho[0]);
        assert!((r.transform_to(3) - (-3f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn lambda_positive_rejected() {
        let s = ChannelShape::flat(1.0, 1.0, 3);
        assert!(hitting_transform(&s, 0.1, Side::Plus, &DepthPolicy::default()).is_err());
    }

    #[test]
    fn exit_time_flat() {
        let s = ChannelShape::flat(1.0, 1.0, 12);
        let v = expected_exit_time(&s, 1.0, 10.0).unwrap();
        assert!((v - 9.0).abs() < 1e-9, "{v}");
        let p = hit_probability(&s, 3.0, 10.0).unwrap();
        assert!((p - 0.7).abs() < 1e-12);
    }
}
