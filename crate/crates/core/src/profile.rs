//! Width profiles l(x) along an edge and their scale/speed measures.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::num::quad;

/// A positive width function on `[0, length]`.
pub trait Width: Send + Sync {
    fn length(&self) -> f64;
    fn width(&self, x: f64) -> f64;
    fn dwidth(&self, x: f64) -> f64;
    /// `(scale, beta)` when `l(x) = scale * (length - x)^beta`, so the
    /// width vanishes at the far end.
    fn tip(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Scale function `p(x) = ∫_0^x dy / l(y)`.
pub fn scale_measure(w: &dyn Width, x: f64) -> f64 {
    if let Some((s, b)) = w.tip() {
        let len = w.length();
        let e = 1.0 - b;
        return (len.powf(e) - (len - x).max(0.0).powf(e)) / (s * e);
    }
    quad::integrate(|y| 1.0 / w.width(y), 0.0, x, 1e-12, 0.0).0
}

/// Speed measure `m(x) = 2 ∫_0^x l(y) dy`.
pub fn speed_measure(w: &dyn Width, x: f64) -> f64 {
    if let Some((s, b)) = w.tip() {
        let len = w.length();
        let e = 1.0 + b;
        return 2.0 * s * (len.powf(e) - (len - x).max(0.0).powf(e)) / e;
    }
    2.0 * quad::integrate(|y| w.width(y), 0.0, x, 1e-12, 0.0).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Constant,
    TrigPolynomial,
    TipVanishing,
}

/// Width profile of one edge.
///
/// * `Constant`: `[w]`.
/// * `TrigPolynomial`: `[a, b, c_1, .., c_n]` with `t = x / length` and
///   `l = a + (b - a)(1 - cos πt)/2 + Σ c_j sin(jπt)`, so `l(0) = a`, `l(len) = b`.
/// * `TipVanishing`: `[scale, beta]`, `l = scale (length - x)^beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthProfile {
    pub kind: ProfileKind,
    pub coefficients: Vec<f64>,
    pub length: f64,
}

impl WidthProfile {
    pub fn constant(w: f64, length: f64) -> Self {
        Self { kind: ProfileKind::Constant, coefficients: vec![w], length }
    }

    pub fn trig(start: f64, end: f64, sines: &[f64], length: f64) -> Self {
        let mut c = vec![start, end];
        c.extend_from_slice(sines);
        Self { kind: ProfileKind::TrigPolynomial, coefficients: c, length }
    }

    pub fn tip(scale: f64, beta: f64, length: f64) -> Self {
        Self { kind: ProfileKind::TipVanishing, coefficients: vec![scale, beta], length }
    }

    /// Width at the start of the edge (x = 0).
    pub fn start_width(&self) -> f64 {
        self.width(0.0)
    }

    /// Width at the far end (zero for a vanishing tip).
    pub fn end_width(&self) -> f64 {
        match self.kind {
            ProfileKind::TrigPolynomial => self.coefficients[1],
            _ => self.width(self.length),
        }
    }

    /// The same geometry read from the other end.
    ///
    /// Tip profiles cannot be reversed and are returned unchanged.
    pub fn reversed(&self) -> Self {
        match self.kind {
            ProfileKind::TrigPolynomial => {
                let mut c = self.coefficients.clone();
                c.swap(0, 1);
                for (j, v) in c.iter_mut().enumerate().skip(2) {
                    // sin(jπ(1-t)) = (-1)^{j+1} sin(jπt), harmonic j = index - 1
                    if (j - 1) % 2 == 0 {
                        *v = -*v;
                    }
                }
                Self { kind: self.kind, coefficients: c, length: self.length }
            }
            _ => self.clone(),
        }
    }

    pub fn tip_exponent(&self) -> Option<f64> {
        (self.kind == ProfileKind::TipVanishing).then(|| self.coefficients[1])
    }
}

impl Width for WidthProfile {
    fn length(&self) -> f64 {
        self.length
    }

    fn width(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.kind {
            ProfileKind::Constant => c[0],
            ProfileKind::TrigPolynomial => {
                let t = x / self.length;
                let mut l = c[0] + (c[1] - c[0]) * 0.5 * (1.0 - (PI * t).cos());
                for (j, cj) in c.iter().enumerate().skip(2) {
                    l += cj * ((j - 1) as f64 * PI * t).sin();
                }
                l
            }
            ProfileKind::TipVanishing => c[0] * (self.length - x).max(0.0).powf(c[1]),
        }
    }

    fn dwidth(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.kind {
            ProfileKind::Constant => 0.0,
            ProfileKind::TrigPolynomial => {
                let t = x / self.length;
                let mut d = (c[1] - c[0]) * 0.5 * PI * (PI * t).sin();
                for (j, cj) in c.iter().enumerate().skip(2) {
                    let k = (j - 1) as f64 * PI;
                    d += cj * k * (k * t).cos();
                }
                d / self.length
            }
            ProfileKind::TipVanishing => {
                let rho = self.length - x;
                if rho <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -c[0] * c[1] * rho.powf(c[1] - 1.0)
                }
            }
        }
    }

    fn tip(&self) -> Option<(f64, f64)> {
        (self.kind == ProfileKind::TipVanishing).then(|| (self.coefficients[0], self.coefficients[1]))
    }
}

/// Profile read backwards: `l~(x) = l(length - x)`.
pub struct Reversed<'a>(pub &'a dyn Width);

impl Width for Reversed<'_> {
    fn length(&self) -> f64 {
        self.0.length()
    }
    fn width(&self, x: f64) -> f64 {
        self.0.width(self.0.length() - x)
    }
    fn dwidth(&self, x: f64) -> f64 {
        -self.0.dwidth(self.0.length() - x)
    }
}

/// `l(x) = scale * exp(rate * x)`, mainly for tests with closed forms.
pub struct Exponential {
    pub scale: f64,
    pub rate: f64,
    pub length: f64,
}

impl Width for Exponential {
    fn length(&self) -> f64 {
        self.length
    }
    fn width(&self, x: f64) -> f64 {
        self.scale * (self.rate * x).exp()
    }
    fn dwidth(&self, x: f64) -> f64 {
        self.rate * self.width(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_endpoints_and_reverse() {
        let p = WidthProfile::trig(0.8, 1.2, &[0.05, -0.03, 0.02], 1.7);
        assert!((p.width(0.0) - 0.8).abs() < 1e-15);
        assert!((p.width(1.7) - 1.2).abs() < 1e-14);
        let r = p.reversed();
        for i in 0..=20 {
            let x = 1.7 * i as f64 / 20.0;
            assert!((r.width(x) - p.width(1.7 - x)).abs() < 1e-14);
            assert!((r.dwidth(x) + p.dwidth(1.7 - x)).abs() < 1e-13);
        }
        assert_eq!(r.reversed(), p);
    }

    #[test]
    fn trig_derivative_matches_difference() {
        let p = WidthProfile::trig(0.8, 1.2, &[0.05, -0.03], 1.3);
        let h = 1e-6;
        for x in [0.1, 0.5, 1.0] {
            let fd = (p.width(x + h) - p.width(x - h)) / (2.0 * h);
            assert!((fd - p.dwidth(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn tip_measures_closed_form_vs_quadrature() {
        let p = WidthProfile::tip(0.7, 0.5, 0.9);
        let x = 0.6;
        let q = quad::integrate(|y| 1.0 / p.width(y), 0.0, x, 1e-13, 0.0).0;
        assert!((scale_measure(&p, x) - q).abs() < 1e-11);
        let m = 2.0 * quad::integrate(|y| p.width(y), 0.0, x, 1e-13, 0.0).0;
        assert!((speed_measure(&p, x) - m).abs() < 1e-11);
    }
}
