//! Random channel geometries: sampling, reflection, validation, file format.
//!
//! A channel is a chain of cells on each side of the origin. A cell is one
//! main-channel (spine) segment followed by a junction where a single
//! dead-end wing branches off.
//!
//! Cells are stored in physical orientation. On the positive side the
//! junction sits at the right end of the spine segment, on the negative side
//! at the left end. `alpha` is always the spine width just left of the
//! junction and `beta` the width just right of it, so
//! `alpha - beta = sign(wing_r) * gamma` on both sides.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::quad;
use crate::profile::{ProfileKind, Width, WidthProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub spine_length_lo: f64,
    pub spine_length_hi: f64,
    pub width_min: f64,
    pub width_max: f64,
    /// A₁: bound on wing extent and wing width.
    pub wing_extent: f64,
    /// Wing extents are drawn from `[frac * A₁, A₁]`.
    pub wing_extent_min_frac: f64,
    pub wing_width_lo: f64,
    pub wing_width_hi: f64,
    pub tip_exponent: f64,
    pub trig_degree: usize,
    pub trig_amplitude: f64,
    pub rectangular_mode: bool,
    /// Length quantum in rectangular mode.
    pub quantum_x: f64,
    /// Width quantum in rectangular mode.
    pub quantum_z: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            spine_length_lo: 1.0,
            spine_length_hi: 2.0,
            width_min: 0.5,
            width_max: 1.5,
            wing_extent: 1.0,
            wing_extent_min_frac: 0.25,
            wing_width_lo: 0.1,
            wing_width_hi: 0.4,
            tip_exponent: 0.5,
            trig_degree: 3,
            trig_amplitude: 0.1,
            rectangular_mode: false,
            quantum_x: 0.25,
            quantum_z: 0.25,
        }
    }
}

/// Width of the vanishing wing in the degenerate flat case, relative to the spine.
pub const FLAT_WING_RATIO: f64 = 1e-15;

impl GeneratorParams {
    /// Constant-width spine with negligible wings.
    pub fn flat(width: f64) -> Self {
        Self { width_min: width, width_max: width, trig_amplitude: 0.0, ..Self::default() }
    }

    /// Piecewise-constant widths and rectangular wings for the 2D solver.
    pub fn rectangular() -> Self {
        Self {
            spine_length_lo: 2.0,
            spine_length_hi: 3.0,
            width_min: 0.5,
            width_max: 1.5,
            wing_extent: 0.75,
            wing_extent_min_frac: 1.0 / 3.0,
            wing_width_lo: 0.25,
            wing_width_hi: 0.5,
            tip_exponent: 0.0,
            trig_degree: 0,
            trig_amplitude: 0.0,
            rectangular_mode: true,
            quantum_x: 0.25,
            quantum_z: 0.25,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.width_min == self.width_max && self.trig_amplitude == 0.0 && !self.rectangular_mode
    }

    fn inner_bounds(&self) -> (f64, f64) {
        (self.width_min + self.trig_amplitude, self.width_max - self.trig_amplitude)
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Param(m.to_string()));
        let all = [
            self.spine_length_lo,
            self.spine_length_hi,
            self.width_min,
            self.width_max,
            self.wing_extent,
            self.wing_extent_min_frac,
            self.wing_width_lo,
            self.wing_width_hi,
            self.tip_exponent,
            self.trig_amplitude,
            self.quantum_x,
            self.quantum_z,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("all parameters must be finite");
        }
        if !(self.spine_length_lo > 0.0 && self.spine_length_lo <= self.spine_length_hi) {
            return fail("0 < L_lo <= L_hi");
        }
        if !(self.width_min > 0.0 && self.width_min <= self.width_max) {
            return fail("0 < l_min <= l_max");
        }
        if !(self.wing_extent > 0.0) {
            return fail("A1 > 0");
        }
        if !(self.wing_extent_min_frac > 0.0 && self.wing_extent_min_frac <= 1.0) {
            return fail("wing extent fraction in (0, 1] (wing_r = 0 is excluded)");
        }
        if !(self.wing_width_lo > 0.0 && self.wing_width_lo <= self.wing_width_hi) {
            return fail("0 < wing width lo <= wing width hi");
        }
        if self.wing_width_hi > self.wing_extent {
            return fail("wing widths must not exceed A1");
        }
        if self.rectangular_mode {
            if !(self.quantum_x > 0.0 && self.quantum_z > 0.0) {
                return fail("quanta must be positive");
            }
            if self.spine_length_lo < 2.0 * self.wing_extent {
                return fail("rectangular mode needs L_lo >= 2 A1 so wings do not overlap");
            }
            if self.width_max - self.width_min < self.quantum_z {
                return fail("rectangular mode needs at least two width levels");
            }
            if self.wing_width_lo > self.quantum_z * 2.0 || self.wing_width_hi < self.quantum_z {
                return fail("rectangular wing widths are one or two width quanta");
            }
            let lo = (self.wing_extent * self.wing_extent_min_frac / self.quantum_x).ceil();
            if lo * self.quantum_x > self.wing_extent {
                return fail("no quantized wing extent fits in [frac A1, A1]");
            }
            let llo = (self.spine_length_lo / self.quantum_x).ceil();
            if llo * self.quantum_x > self.spine_length_hi {
                return fail("no quantized spine length fits in [L_lo, L_hi]");
            }
            return Ok(());
        }
        if !(self.tip_exponent > 0.0 && self.tip_exponent < 1.0) {
            return fail("wing tip exponent must lie in (0, 1)");
        }
        if self.trig_amplitude < 0.0 {
            return fail("trig amplitude >= 0");
        }
        if self.trig_amplitude > 0.0 && self.trig_degree == 0 {
            return fail("positive amplitude needs trig degree >= 1");
        }
        if self.is_flat() {
            return Ok(());
        }
        let (lo, hi) = self.inner_bounds();
        if hi - lo < self.wing_width_lo {
            return fail("l_max - l_min - 2 amplitude must leave room for a width jump >= wing width lo");
        }
        Ok(())
    }
}

/// One spine segment with the junction and wing at its outer end.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub spine_length: f64,
    /// Width along the spine in increasing physical x.
    pub spine_profile: WidthProfile,
    /// Signed projection of the wing on the x-axis.
    pub wing_r: f64,
    /// Width as a function of distance from the attachment point.
    pub wing_profile: WidthProfile,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Cell {
    /// The cell reflected through x ↦ -x.
    pub fn reflected(&self) -> Self {
        Self {
            spine_length: self.spine_length,
            spine_profile: self.spine_profile.reversed(),
            wing_r: -self.wing_r,
            wing_profile: self.wing_profile.clone(),
            alpha: self.beta,
            beta: self.alpha,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelShape {
    /// Cells for x ≥ 0, nearest the origin first.
    pub positive: Vec<Cell>,
    /// Cells for x < 0, nearest the origin first.
    pub negative: Vec<Cell>,
    pub seed: u64,
    pub params: Option<GeneratorParams>,
    /// Reflection of the generated shape; extension reflects too.
    pub mirrored: bool,
}

fn stream_rng(seed: u64, side: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((side << 60) | index);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn int_between(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    rng.random_range(lo..=hi)
}

struct Junction {
    spine_length: f64,
    sines: Vec<f64>,
    narrow: f64,
    wide: f64,
    sign: f64,
    extent: f64,
}

fn smooth_junction(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Junction {
    let (lo, hi) = p.inner_bounds();
    let spine_length = uniform(rng, p.spine_length_lo, p.spine_length_hi);
    let amp = if p.trig_degree > 0 { p.trig_amplitude / p.trig_degree as f64 } else { 0.0 };
    let sines = (0..p.trig_degree).map(|_| uniform(rng, -amp, amp)).collect();
    let gamma = uniform(rng, p.wing_width_lo, p.wing_width_hi.min(hi - lo));
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let narrow = uniform(rng, lo, hi - gamma);
    let extent = uniform(rng, p.wing_extent_min_frac * p.wing_extent, p.wing_extent);
    Junction { spine_length, sines, narrow, wide: narrow + gamma, sign, extent }
}

/// Cells of one side in outward orientation (junction at the far end).
fn outward_cells(p: &GeneratorParams, seed: u64, side: Side, n: usize) -> Vec<Cell> {
    let side_key = match side {
        Side::Plus => 1,
        Side::Minus => 2,
    };
    if p.rectangular_mode {
        return outward_rect_cells(p, seed, side_key, n);
    }
    let mut origin = stream_rng(seed, 0, 0);
    let (lo, hi) = p.inner_bounds();
    let mut start = if p.is_flat() { p.width_min } else { uniform(&mut origin, lo, hi) };
    let mut cells = Vec::with_capacity(n);
    for k in 1..=n {
        let mut rng = stream_rng(seed, side_key, k as u64);
        let cell = if p.is_flat() {
            let w = p.width_min;
            let spine_length = uniform(&mut rng, p.spine_length_lo, p.spine_length_hi);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let extent = uniform(&mut rng, p.wing_extent_min_frac * p.wing_extent, p.wing_extent);
            let gamma = FLAT_WING_RATIO * w;
            Cell {
                spine_length,
                spine_profile: WidthProfile::constant(w, spine_length),
                wing_r: sign * extent,
                wing_profile: WidthProfile::tip(gamma / extent.powf(p.tip_exponent), p.tip_exponent, extent),
                alpha: w,
                beta: w,
                gamma,
            }
        } else {
            let j = smooth_junction(p, &mut rng);
            // Sterbenz: the difference of the two stored widths is exact.
            let gamma = j.wide - j.narrow;
            let (alpha, beta) = if j.sign > 0.0 { (j.wide, j.narrow) } else { (j.narrow, j.wide) };
            Cell {
                spine_length: j.spine_length,
                spine_profile: WidthProfile::trig(start, alpha, &j.sines, j.spine_length),
                wing_r: j.sign * j.extent,
                wing_profile: WidthProfile::tip(gamma / j.extent.powf(p.tip_exponent), p.tip_exponent, j.extent),
                alpha,
                beta,
                gamma,
            }
        };
        start = cell.beta;
        cells.push(cell);
    }
    cells
}

fn outward_rect_cells(p: &GeneratorParams, seed: u64, side_key: u64, n: usize) -> Vec<Cell> {
    let qz = p.quantum_z;
    let qx = p.quantum_x;
    let lvl_lo = (p.width_min / qz).ceil() as i64;
    let lvl_hi = (p.width_max / qz).floor() as i64;
    let jump_hi = ((p.wing_width_hi / qz).floor() as i64).clamp(1, 2);
    let jump_lo = ((p.wing_width_lo / qz).ceil() as i64).clamp(1, jump_hi);
    let len_lo = (p.spine_length_lo / qx).ceil() as i64;
    let len_hi = (p.spine_length_hi / qx).floor() as i64;
    let ext_lo = (p.wing_extent * p.wing_extent_min_frac / qx).ceil() as i64;
    let ext_hi = (p.wing_extent / qx).floor() as i64;
    let mut origin = stream_rng(seed, 0, 0);
    let mut level = int_between(&mut origin, lvl_lo, lvl_hi);
    let mut cells = Vec::with_capacity(n);
    for k in 1..=n {
        let mut rng = stream_rng(seed, side_key, k as u64);
        let len = int_between(&mut rng, len_lo, len_hi) as f64 * qx;
        let mut jump = int_between(&mut rng, jump_lo, jump_hi);
        let mut dir: i64 = if rng.random::<bool>() { 1 } else { -1 };
        let ext = int_between(&mut rng, ext_lo, ext_hi) as f64 * qx;
        if level + dir * jump > lvl_hi || level + dir * jump < lvl_lo {
            dir = -dir;
        }
        if level + dir * jump > lvl_hi || level + dir * jump < lvl_lo {
            jump = 1;
        }
        let next = level + dir * jump;
        let alpha = level as f64 * qz;
        let beta = next as f64 * qz;
        let gamma = (alpha - beta).abs();
        let sign = (alpha - beta).signum();
        cells.push(Cell {
            spine_length: len,
            spine_profile: WidthProfile::constant(alpha, len),
            wing_r: sign * ext,
            wing_profile: WidthProfile::constant(gamma, ext),
            alpha,
            beta,
            gamma,
        });
        level = next;
    }
    cells
}

/// Samples `n_cells` cells on each side of the origin.
///
/// Cell `k` depends only on the random substreams of junctions `k - 1` and
/// `k` (rectangular mode: on the running width level), so a shape sampled
/// with more cells extends a shorter one with the same seed.
pub fn sample_channel(params: &GeneratorParams, seed: u64, n_cells: usize) -> Result<ChannelShape> {
    params.check()?;
    if n_cells == 0 {
        return Err(Error::Param("n_cells >= 1".into()));
    }
    let positive = outward_cells(params, seed, Side::Plus, n_cells);
    let negative = outward_cells(params, seed, Side::Minus, n_cells).iter().map(Cell::reflected).collect();
    Ok(ChannelShape { positive, negative, seed, params: Some(params.clone()), mirrored: false })
}

/// Reflection x ↦ -x.
pub fn mirror(shape: &ChannelShape) -> ChannelShape {
    ChannelShape {
        positive: shape.negative.iter().map(Cell::reflected).collect(),
        negative: shape.positive.iter().map(Cell::reflected).collect(),
        seed: shape.seed,
        params: shape.params.clone(),
        mirrored: !shape.mirrored,
    }
}

impl ChannelShape {
    /// Hand-built shape from outward-oriented cells on each side.
    pub fn from_outward(positive: Vec<Cell>, negative_outward: Vec<Cell>) -> Self {
        Self {
            positive,
            negative: negative_outward.iter().map(Cell::reflected).collect(),
            seed: 0,
            params: None,
            mirrored: false,
        }
    }

    /// Constant-width channel of identical cells with negligible wings.
    pub fn flat(width: f64, cell_length: f64, n_cells: usize) -> Self {
        let gamma = FLAT_WING_RATIO * width;
        let ext: f64 = 0.5;
        let cell = |r: f64| Cell {
            spine_length: cell_length,
            spine_profile: WidthProfile::constant(width, cell_length),
            wing_r: r,
            wing_profile: WidthProfile::tip(gamma / ext.sqrt(), 0.5, ext),
            alpha: width,
            beta: width,
            gamma,
        };
        let pos: Vec<Cell> = (0..n_cells).map(|k| cell(if k % 2 == 0 { ext } else { -ext })).collect();
        Self::from_outward(pos.clone(), pos)
    }

    pub fn n_cells(&self, side: Side) -> usize {
        match side {
            Side::Plus => self.positive.len(),
            Side::Minus => self.negative.len(),
        }
    }

    /// Cells of one side reoriented so that the side points towards +x.
    pub fn outward(&self, side: Side) -> Vec<Cell> {
        match side {
            Side::Plus => self.positive.clone(),
            Side::Minus => self.negative.iter().map(Cell::reflected).collect(),
        }
    }

    /// Regenerates with at least `n` cells per side when generator
    /// parameters are known; hand-built shapes are returned unchanged.
    pub fn extended(&self, n: usize) -> Result<ChannelShape> {
        match &self.params {
            Some(p) if n > self.positive.len().min(self.negative.len()) => {
                let s = sample_channel(p, self.seed, n)?;
                Ok(if self.mirrored { mirror(&s) } else { s })
            }
            _ => Ok(self.clone()),
        }
    }

    pub fn is_rectangular(&self) -> bool {
        self.params.as_ref().is_some_and(|p| p.rectangular_mode)
            || self.positive.iter().chain(&self.negative).all(|c| {
                c.spine_profile.kind == ProfileKind::Constant && c.wing_profile.kind == ProfileKind::Constant
            })
    }

    /// Junction positions (outer end of each cell) in physical x.
    pub fn junctions(&self, side: Side) -> Vec<f64> {
        let cells = match side {
            Side::Plus => &self.positive,
            Side::Minus => &self.negative,
        };
        let mut x = 0.0;
        cells
            .iter()
            .map(|c| {
                x += c.spine_length;
                side.sign() * x
            })
            .collect()
    }

    /// Physical extent `[x_min, x_max]` of the spine.
    pub fn extent(&self) -> (f64, f64) {
        let r: f64 = self.positive.iter().map(|c| c.spine_length).sum();
        let l: f64 = self.negative.iter().map(|c| c.spine_length).sum();
        (-l, r)
    }

    /// Locates the spine cell containing physical `x`: `(side, index, local)`,
    /// where `local` runs in increasing physical x from the cell's left end.
    pub fn locate(&self, x: f64) -> Option<(Side, usize, f64)> {
        if x >= 0.0 {
            let mut left = 0.0;
            for (i, c) in self.positive.iter().enumerate() {
                if x <= left + c.spine_length {
                    return Some((Side::Plus, i, (x - left).max(0.0)));
                }
                left += c.spine_length;
            }
        } else {
            let mut right = 0.0;
            for (i, c) in self.negative.iter().enumerate() {
                if x >= right - c.spine_length {
                    return Some((Side::Minus, i, (x - (right - c.spine_length)).max(0.0)));
                }
                right -= c.spine_length;
            }
        }
        None
    }

    pub fn cell(&self, side: Side, i: usize) -> &Cell {
        match side {
            Side::Plus => &self.positive[i],
            Side::Minus => &self.negative[i],
        }
    }

    /// Spine width at physical `x`.
    pub fn spine_width(&self, x: f64) -> Result<f64> {
        let (side, i, local) =
            self.locate(x).ok_or_else(|| Error::Domain(format!("x = {x} outside the channel")))?;
        Ok(self.cell(side, i).spine_profile.width(local))
    }

    /// `∫_0^x dy / l₀(y)` along the spine (signed for x < 0).
    pub fn spine_scale(&self, x: f64) -> Result<f64> {
        self.spine_integral(x, |c, a, b| {
            quad::integrate(|y| 1.0 / c.spine_profile.width(y), a, b, 1e-12, 0.0).0
        })
    }

    fn spine_integral<F: Fn(&Cell, f64, f64) -> f64>(&self, x: f64, f: F) -> Result<f64> {
        let (side, i, local) =
            self.locate(x).ok_or_else(|| Error::Domain(format!("x = {x} outside the channel")))?;
        let cells = match side {
            Side::Plus => &self.positive,
            Side::Minus => &self.negative,
        };
        let mut total = 0.0;
        for c in &cells[..i] {
            total += f(c, 0.0, c.spine_length);
        }
        let c = &cells[i];
        total += match side {
            Side::Plus => f(c, 0.0, local),
            Side::Minus => f(c, local, c.spine_length),
        };
        Ok(side.sign() * total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub side: Side,
    /// Zero-based cell index, `usize::MAX` for shape-level violations.
    pub cell: usize,
    pub constraint: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} cell {}: {}", self.side, self.cell, self.constraint)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationConfig {
    pub samples_per_edge: usize,
    pub junction_rel_tol: f64,
    pub continuity_rel_tol: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { samples_per_edge: 33, junction_rel_tol: 1e-14, continuity_rel_tol: 1e-12 }
    }
}

/// Increments of `∫ dρ / l` over dyadic shells `[2^{-j-1}, 2^{-j}]·len` of tip
/// distance. Returns true when the increments decay geometrically.
fn tip_scale_integrable(w: &WidthProfile) -> bool {
    let len = w.length;
    let mut prev = f64::NAN;
    let mut ratios = Vec::new();
    for j in 2..24 {
        let hi = len * 0.5f64.powi(j);
        let lo = hi * 0.5;
        let inc = quad::integrate(|rho| 1.0 / w.width(len - rho), lo, hi, 1e-10, 0.0).0;
        if prev.is_finite() {
            ratios.push(inc / prev);
        }
        prev = inc;
    }
    let tail = &ratios[ratios.len() - 6..];
    tail.iter().all(|r| r.is_finite() && *r < 0.99)
}

/// Lists every violated invariant; an empty list means the shape is valid.
pub fn validate(shape: &ChannelShape, cfg: &ValidationConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    for side in [Side::Plus, Side::Minus] {
        let cells = shape.outward(side);
        for (k, c) in cells.iter().enumerate() {
            let mut bad = |m: String| out.push(Violation { side, cell: k, constraint: m });
            let scale = c.alpha.max(c.beta).max(c.gamma);
            let defect = c.alpha - c.beta - c.wing_r.signum() * c.gamma;
            if !(defect.abs() <= cfg.junction_rel_tol * scale) {
                bad(format!("junction: alpha - beta - sign(r) gamma = {defect:e}"));
            }
            if !(c.alpha > 0.0 && c.beta > 0.0 && c.gamma > 0.0) {
                bad("junction widths must be positive".into());
            }
            if !(c.spine_length > 0.0) || c.spine_profile.length != c.spine_length {
                bad("spine length must be positive and match its profile".into());
            }
            if c.wing_r == 0.0 || !c.wing_r.is_finite() {
                bad("wing_r must be nonzero".into());
            }
            if (c.wing_profile.length - c.wing_r.abs()).abs() > 1e-14 * c.wing_r.abs() {
                bad("wing profile length must equal |wing_r|".into());
            }
            let close = |a: f64, b: f64| (a - b).abs() <= cfg.continuity_rel_tol * a.abs().max(b.abs());
            if !close(c.spine_profile.end_width(), c.alpha) {
                bad("spine end width differs from alpha".into());
            }
            if let Some(next) = cells.get(k + 1) {
                if !close(next.spine_profile.start_width(), c.beta) {
                    bad("next spine start width differs from beta".into());
                }
            }
            if !close(c.wing_profile.start_width(), c.gamma) {
                bad("wing width at attachment differs from gamma".into());
            }
            let n = cfg.samples_per_edge.max(2);
            let mut spine_min = f64::INFINITY;
            let mut spine_max = f64::NEG_INFINITY;
            for i in 0..n {
                let x = c.spine_length * i as f64 / (n - 1) as f64;
                let l = c.spine_profile.width(x);
                spine_min = spine_min.min(l);
                spine_max = spine_max.max(l);
            }
            if !(spine_min > 0.0) {
                bad("spine width must be positive".into());
            }
            let mut wing_ok = true;
            for i in 0..n - 1 {
                let x = c.wing_profile.length * i as f64 / (n - 1) as f64;
                let l = c.wing_profile.width(x);
                wing_ok &= l > 0.0 && l.is_finite();
                if let Some(p) = &shape.params {
                    wing_ok &= l <= p.wing_extent * (1.0 + 1e-12);
                }
            }
            if !wing_ok {
                bad("wing width outside (0, A1]".into());
            }
            if let Some(beta) = c.wing_profile.tip_exponent() {
                if !tip_scale_integrable(&c.wing_profile) {
                    bad(format!("wing tip exponent {beta}: ∫dx/l diverges at the tip"));
                }
            }
            if let Some(p) = &shape.params {
                let tol = 1e-12;
                if c.spine_length < p.spine_length_lo * (1.0 - tol) || c.spine_length > p.spine_length_hi * (1.0 + tol)
                {
                    bad(format!("spine length {} outside [L_lo, L_hi]", c.spine_length));
                }
                let wmax = if p.is_flat() { p.width_max * (1.0 + 1e-12) } else { p.width_max * (1.0 + tol) };
                if spine_min < p.width_min * (1.0 - tol) || spine_max > wmax {
                    bad(format!("spine width range [{spine_min}, {spine_max}] outside [l_min, l_max]"));
                }
                if c.wing_r.abs() > p.wing_extent * (1.0 + tol) {
                    bad(format!("|wing_r| = {} exceeds A1", c.wing_r.abs()));
                }
            }
        }
    }
    if let (Some(p), Some(n)) = (shape.positive.first(), shape.negative.first()) {
        let (a, b) = (p.spine_profile.start_width(), n.spine_profile.end_width());
        if (a - b).abs() > cfg.continuity_rel_tol * a.max(b) {
            out.push(Violation { side: Side::Plus, cell: usize::MAX, constraint: "widths differ at the origin".into() });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Channel file

pub const FORMAT: &str = "channel/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellRecord {
    spine_length: f64,
    spine_coeffs: Vec<f64>,
    wing_r: f64,
    wing_scale: f64,
    tip_beta: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChannelFile {
    format: String,
    seed: u64,
    params: Option<GeneratorParams>,
    #[serde(default)]
    mirrored: bool,
    positive: Vec<CellRecord>,
    negative: Vec<CellRecord>,
}

impl From<&Cell> for CellRecord {
    fn from(c: &Cell) -> Self {
        let (wing_scale, tip_beta) = match c.wing_profile.kind {
            ProfileKind::TipVanishing => (c.wing_profile.coefficients[0], c.wing_profile.coefficients[1]),
            _ => (c.wing_profile.coefficients[0], 0.0),
        };
        Self {
            spine_length: c.spine_length,
            spine_coeffs: c.spine_profile.coefficients.clone(),
            wing_r: c.wing_r,
            wing_scale,
            tip_beta,
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
        }
    }
}

impl TryFrom<&CellRecord> for Cell {
    type Error = Error;
    fn try_from(r: &CellRecord) -> Result<Self> {
        let spine_profile = match r.spine_coeffs.len() {
            0 => return Err(Error::InvalidShape("empty spine_coeffs".into())),
            1 => WidthProfile::constant(r.spine_coeffs[0], r.spine_length),
            _ => WidthProfile {
                kind: ProfileKind::TrigPolynomial,
                coefficients: r.spine_coeffs.clone(),
                length: r.spine_length,
            },
        };
        let ext = r.wing_r.abs();
        let wing_profile = if r.tip_beta == 0.0 {
            WidthProfile::constant(r.wing_scale, ext)
        } else {
            WidthProfile::tip(r.wing_scale, r.tip_beta, ext)
        };
        Ok(Cell {
            spine_length: r.spine_length,
            spine_profile,
            wing_r: r.wing_r,
            wing_profile,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
        })
    }
}

impl ChannelShape {
    pub fn to_json(&self) -> String {
        let file = ChannelFile {
            format: FORMAT.to_string(),
            seed: self.seed,
            params: self.params.clone(),
            mirrored: self.mirrored,
            positive: self.positive.iter().map(CellRecord::from).collect(),
            negative: self.negative.iter().map(CellRecord::from).collect(),
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(s)?;
        if file.format != FORMAT {
            return Err(Error::InvalidShape(format!("unsupported format {:?}", file.format)));
        }
        let conv = |v: &[CellRecord]| v.iter().map(Cell::try_from).collect::<Result<Vec<_>>>();
        Ok(Self { positive: conv(&file.positive)?, negative: conv(&file.negative)?, seed: file.seed, params: file.params, mirrored: file.mirrored })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes via a temporary file and rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::output::write_atomic(path, self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_params_give_constant_spines() {
        let s = sample_channel(&GeneratorParams::flat(1.0), 3, 1).unwrap();
        for c in s.positive.iter().chain(&s.negative) {
            assert_eq!(c.spine_profile.kind, ProfileKind::Constant);
            assert_eq!(c.spine_profile.width(0.3), 1.0);
        }
        assert!(validate(&s, &ValidationConfig::default()).is_empty());
    }

    #[test]
    fn junction_exact_and_prefix_property() {
        let p = GeneratorParams::default();
        let a = sample_channel(&p, 11, 20).unwrap();
        let b = sample_channel(&p, 11, 35).unwrap();
        assert_eq!(a.positive[..], b.positive[..20]);
        assert_eq!(a.negative[..], b.negative[..20]);
        for c in &a.positive {
            assert_eq!(c.alpha - c.beta, c.wing_r.signum() * c.gamma);
        }
        assert!(validate(&a, &ValidationConfig::default()).is_empty());
    }

    #[test]
    fn rectangular_shapes_validate() {
        let s = sample_channel(&GeneratorParams::rectangular(), 5, 12).unwrap();
        assert!(s.is_rectangular());
        let v = validate(&s, &ValidationConfig::default());
        assert!(v.is_empty(), "{v:?}");
        for c in &s.positive {
            assert!(c.spine_length >= 2.0 * c.wing_r.abs());
        }
    }

    #[test]
    fn mirror_flips_wing_and_swaps_junction_widths() {
        let s = sample_channel(&GeneratorParams::default(), 2, 4).unwrap();
        let m = mirror(&s);
        let c = &s.positive[0];
        let d = &m.negative[0];
        assert_eq!(d.wing_r, -c.wing_r);
        assert_eq!((d.alpha, d.beta), (c.beta, c.alpha));
        assert_eq!(mirror(&m), s);
        assert!(validate(&m, &ValidationConfig::default()).is_empty());
    }

    #[test]
    fn locate_and_spine_scale() {
        let s = ChannelShape::flat(2.0, 1.0, 3);
        assert_eq!(s.locate(1.5).map(|v| (v.0, v.1)), Some((Side::Plus, 1)));
        assert_eq!(s.locate(-0.25).map(|v| (v.0, v.1)), Some((Side::Minus, 0)));
        assert!((s.spine_scale(2.5).unwrap() - 1.25).abs() < 1e-14);
        assert!((s.spine_scale(-2.5).unwrap() + 1.25).abs() < 1e-14);
        assert!(s.spine_width(4.0).is_err());
    }

    #[test]
    fn bad_params_are_named() {
        let p = GeneratorParams { width_min: 2.0, width_max: 1.0, ..Default::default() };
        match sample_channel(&p, 1, 1) {
            Err(Error::Param(m)) => assert!(m.contains("l_min")),
            other => panic!("{other:?}"),
        }
    }
}
