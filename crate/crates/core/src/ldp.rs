//! Lyapunov exponent μ(λ), rate function I(a) and front speeds c*.

use rayon::prelude::*;

use crate::channel::{ChannelShape, Side};
use crate::error::{Error, Result};
use crate::num::root::brent;
use crate::num::stats;
use crate::output::Table;
use crate::sturm::{hitting_transform, DepthPolicy, Method};

/// `[-10, ..., -1e-4, 0]`: 60 geometric points plus zero.
pub fn default_grid() -> Vec<f64> {
    geometric_grid(1e-4, 10.0, 60)
}

/// `n` points `-hi ..= -lo` spaced geometrically, followed by 0.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n)
        .map(|i| -hi * (lo / hi).powf(i as f64 / (n - 1) as f64))
        .collect();
    g.push(0.0);
    g
}

#[derive(Debug, Clone)]
pub struct SpectralCurve {
    pub direction: Side,
    pub lambdas: Vec<f64>,
    pub mu: Vec<f64>,
    /// Standard error from batch means over consecutive cells.
    pub se: Vec<f64>,
    /// Standard deviation of per-batch μ estimates.
    pub batch_sd: Vec<f64>,
    pub batch_length: f64,
    pub mean_length: f64,
    pub n_cells: usize,
}

const BATCHES: usize = 20;

/// `μ(λ) = Σ ln ρ_k / Σ L_k` over the first `n_cells` cells in `direction`.
pub fn mu_curve(shape: &ChannelShape, grid: &[f64], direction: Side, n_cells: usize) -> Result<SpectralCurve> {
    mu_curve_with(shape, grid, direction, n_cells, Method::Ode)
}

pub fn mu_curve_with(shape: &ChannelShape, grid: &[f64], direction: Side, n_cells: usize, method: Method) -> Result<SpectralCurve> {
    if let Some(l) = grid.iter().find(|l| !(**l <= 0.0)) {
        return Err(Error::Domain(format!("λ = {l} > 0: transforms are infinite there")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("λ-grid must be strictly increasing".into()));
    }
    if n_cells == 0 {
        return Err(Error::Domain("n_cells >= 1".into()));
    }
    let shape = shape.extended(n_cells)?;
    let policy = DepthPolicy { report: Some(n_cells), method, ..Default::default() };
    let rows: Vec<(f64, f64, f64, f64, usize, f64)> = grid
        .par_iter()
        .map(|&lambda| {
            let r = hitting_transform(&shape, lambda, direction, &policy)?;
            let n = r.rho.len();
            let logs: Vec<f64> = r.rho.iter().map(|v| v.ln()).collect();
            let total_len = stats::pairwise_sum(&r.lengths);
            let mu = r.log_sum / total_len;
            let b = BATCHES.min(n);
            let per = n / b;
            let batch: Vec<f64> = (0..b)
                .map(|i| {
                    let s = i * per;
                    let e = if i + 1 == b { n } else { s + per };
                    stats::pairwise_sum(&logs[s..e]) / stats::pairwise_sum(&r.lengths[s..e])
                })
                .collect();
            let sd = stats::variance(&batch).sqrt();
            Ok((mu, sd / (b as f64).sqrt(), sd, total_len / b as f64, n, total_len / n as f64))
        })
        .collect::<Result<_>>()?;
    let n = rows.first().map(|r| r.4).unwrap_or(0);
    Ok(SpectralCurve {
        direction,
        lambdas: grid.to_vec(),
        mu: rows.iter().map(|r| r.0).collect(),
        se: rows.iter().map(|r| r.1).collect(),
        batch_sd: rows.iter().map(|r| r.2).collect(),
        batch_length: rows.first().map(|r| r.3).unwrap_or(0.0),
        mean_length: rows.first().map(|r| r.5).unwrap_or(0.0),
        n_cells: n,
    })
}

/// Closed-form curve of a unit-width channel, `μ(λ) = -√(-2λ)`.
pub fn brownian_curve(grid: &[f64], direction: Side) -> SpectralCurve {
    SpectralCurve {
        direction,
        lambdas: grid.to_vec(),
        mu: grid.iter().map(|l| -(-2.0 * l).sqrt()).collect(),
        se: vec![0.0; grid.len()],
        batch_sd: vec![0.0; grid.len()],
        batch_length: 0.0,
        mean_length: 1.0,
        n_cells: 0,
    }
}

impl SpectralCurve {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["lambda", "mu", "se"]);
        for i in 0..self.lambdas.len() {
            t.push_f64(&[self.lambdas[i], self.mu[i], self.se[i]]);
        }
        t
    }

    /// μ at an arbitrary λ in the grid range by interpolation in `√(-λ)`.
    pub fn mu_at(&self, lambda: f64) -> Result<f64> {
        let s = (-lambda).sqrt();
        let g = &self.lambdas;
        if !(lambda >= g[0] && lambda <= *g.last().unwrap()) {
            return Err(Error::Domain(format!("λ = {lambda} outside the grid")));
        }
        let i = g.partition_point(|l| *l < lambda);
        if g[i.min(g.len() - 1)] == lambda {
            return Ok(self.mu[i]);
        }
        let (s0, s1) = ((-g[i - 1]).sqrt(), (-g[i]).sqrt());
        let t = (s - s0) / (s1 - s0);
        Ok(self.mu[i - 1] + t * (self.mu[i] - self.mu[i - 1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub a: f64,
    pub value: f64,
    pub lambda_star: f64,
    /// The supremum sits at the most negative grid point.
    pub clamped: bool,
}

/// `I(a) = sup_{λ ≤ 0} (aλ - μ(λ))` with local quadratic refinement in
/// `s = √(-λ)`.
pub fn rate(curve: &SpectralCurve, a: f64) -> Result<RatePoint> {
    let r = rate_clamped(curve, a)?;
    if r.clamped {
        return Err(Error::GridTooShort { lambda: curve.lambdas[0] });
    }
    Ok(r)
}

/// As [`rate`], but an off-grid supremum returns the grid value with a flag.
pub fn rate_clamped(curve: &SpectralCurve, a: f64) -> Result<RatePoint> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("a = {a} must be positive")));
    }
    let g = &curve.lambdas;
    let phi: Vec<f64> = g.iter().zip(&curve.mu).map(|(l, m)| a * l - m).collect();
    let idx = (0..phi.len()).fold(0, |b, i| if phi[i] > phi[b] { i } else { b });
    if idx == 0 {
        return Ok(RatePoint { a, value: phi[0], lambda_star: g[0], clamped: true });
    }
    let c = idx.clamp(1, g.len() - 2);
    let s: Vec<f64> = (c - 1..=c + 1).map(|i| (-g[i]).sqrt()).collect();
    let f: Vec<f64> = (c - 1..=c + 1).map(|i| phi[i]).collect();
    // Parabola through the three points in s.
    let d01 = (f[1] - f[0]) / (s[1] - s[0]);
    let d12 = (f[2] - f[1]) / (s[2] - s[1]);
    let curv = (d12 - d01) / (s[2] - s[0]);
    let mut best = (phi[idx], g[idx]);
    if curv < 0.0 {
        let slope0 = d01 - curv * (s[0] + s[1]);
        let s_lo = s[2].min(s[0]);
        let s_hi = s[2].max(s[0]);
        let s_star = (-slope0 / (2.0 * curv)).clamp(s_lo, s_hi).max(0.0);
        let val = f[0] + d01 * (s_star - s[0]) + curv * (s_star - s[0]) * (s_star - s[1]);
        if val >= best.0 {
            best = (val, -s_star * s_star);
        }
    }
    Ok(RatePoint { a, value: best.0, lambda_star: best.1, clamped: false })
}

pub fn rate_table(curve: &SpectralCurve, a_values: &[f64]) -> Result<Table> {
    let mut t = Table::new(&["a", "I", "lambda_star", "clamped"]);
    for &a in a_values {
        let r = rate_clamped(curve, a)?;
        t.push(vec![a.to_string(), r.value.to_string(), r.lambda_star.to_string(), r.clamped.to_string()]);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontSpeeds {
    pub c_plus: f64,
    pub c_minus: f64,
    /// Relative residuals of `c I(1/c) = f'(0)`.
    pub residual_plus: f64,
    pub residual_minus: f64,
    pub fprime: f64,
}

/// Root of `c I(1/c) = f'(0)` for one curve.
pub fn speed(curve: &SpectralCurve, fprime: f64) -> Result<(f64, f64)> {
    if !(fprime > 0.0) {
        return Err(Error::Domain("f'(0) must be positive".into()));
    }
    let g = |c: f64| -> Result<f64> { Ok(c * rate(curve, 1.0 / c)?.value - fprime) };
    let guess = (2.0 * fprime).sqrt();
    let (mut lo, mut hi) = (0.5 * guess, 2.0 * guess);
    let mut n = 0;
    while g(lo)? > 0.0 {
        lo *= 0.5;
        n += 1;
        if n > 40 {
            return Err(Error::Bracket("c I(1/c) - f'(0) stays positive as c → 0".into()));
        }
    }
    while g(hi).map_err(|e| Error::Bracket(format!("extending the bracket upwards: {e}")))? < 0.0 {
        lo = hi;
        hi *= 2.0;
        n += 1;
        if n > 40 {
            return Err(Error::Bracket("c I(1/c) - f'(0) stays negative".into()));
        }
    }
    let samples: Vec<f64> = (0..=8).map(|i| g(lo + (hi - lo) * i as f64 / 8.0)).collect::<Result<_>>()?;
    if samples.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Consistency {
            what: "monotonicity of c I(1/c) on the bracket".into(),
            a: samples[0],
            b: samples[8],
        });
    }
    let c = brent(|c| g(c).unwrap_or(f64::NAN), lo, hi, 1e-15, 200)
        .ok_or_else(|| Error::Bracket("no sign change".into()))?;
    let res = g(c)?.abs() / fprime;
    Ok((c, res))
}

/// `c*₊ > 0` from the plus curve and `c*₋ < 0` from the minus curve.
pub fn speeds(plus: &SpectralCurve, minus: &SpectralCurve, fprime: f64) -> Result<FrontSpeeds> {
    let (cp, rp) = speed(plus, fprime)?;
    let (cm, rm) = speed(minus, fprime)?;
    if rp > 1e-8 || rm > 1e-8 {
        return Err(Error::Consistency { what: "front speed residuals".into(), a: rp, b: rm });
    }
    Ok(FrontSpeeds { c_plus: cp, c_minus: -cm, residual_plus: rp, residual_minus: rm, fprime })
}

impl FrontSpeeds {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["c_plus", "c_minus", "residual_plus", "residual_minus", "fprime"]);
        t.push_f64(&[self.c_plus, self.c_minus, self.residual_plus, self.residual_minus, self.fprime]);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_rate_and_speed() {
        let c = brownian_curve(&default_grid(), Side::Plus);
        for a in [0.3, 1.0, 7.0, 100.0] {
            let r = rate(&c, a).unwrap();
            assert!((r.value - 0.5 / a).abs() < 1e-12 * (0.5 / a).max(1.0), "{a}");
            assert!((r.lambda_star + 0.5 / (a * a)).abs() < 1e-10, "{a}");
        }
        let s = speeds(&c, &c, 1.0).unwrap();
        assert!((s.c_plus - 2f64.sqrt()).abs() < 1e-10);
        assert!((s.c_minus + 2f64.sqrt()).abs() < 1e-10);
        assert!((speed(&c, 2.0).unwrap().0 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn off_grid_is_flagged() {
        let c = brownian_curve(&default_grid(), Side::Plus);
        assert!(matches!(rate(&c, 0.1), Err(Error::GridTooShort { .. })));
        assert!(rate_clamped(&c, 0.1).unwrap().clamped);
    }

    #[test]
    fn positive_lambda_rejected() {
        let s = ChannelShape::flat(1.0, 1.0, 4);
        assert!(mu_curve(&s, &[-1.0, 0.5], Side::Plus, 2).is_err());
    }
}
