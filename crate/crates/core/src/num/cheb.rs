//! Chebyshev–Lobatto collocation: cumulative integration and interpolation.

use std::f64::consts::PI;

/// Nodes and operators for degree `n` on an interval `[a, b]`.
#[derive(Debug, Clone)]
pub struct Cheb {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// Increasing nodes.
    pub nodes: Vec<f64>,
    /// Row-major cumulative integration matrix, `(Qf)_i = ∫_a^{x_i} f`.
    q: Vec<f64>,
}

fn unit_t(n: usize, j: usize) -> f64 {
    // increasing order on [-1, 1]
    -(PI * j as f64 / n as f64).cos()
}

/// Chebyshev coefficients of the interpolant through increasing Lobatto values.
pub fn coeffs(vals: &[f64]) -> Vec<f64> {
    let n = vals.len() - 1;
    let mut c = vec![0.0; n + 1];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, &v) in vals.iter().enumerate() {
            // node t_j = -cos(pi j / n) = cos(pi (n - j) / n)
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            s += w * v * (PI * (k * (n - j)) as f64 / n as f64).cos();
        }
        *ck = 2.0 * s / n as f64;
        if k == 0 || k == n {
            *ck *= 0.5;
        }
    }
    c
}

/// Clenshaw evaluation of `Σ c_k T_k(t)`.
pub fn clenshaw(c: &[f64], t: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + c[0]
}

/// Coefficients of the antiderivative vanishing at `t = -1`.
pub fn antiderivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut b = vec![0.0; n + 1];
    for (k, &ck) in c.iter().enumerate() {
        match k {
            0 => b[1] += ck,
            1 => {
                b[2] += ck / 4.0;
                b[0] += ck / 4.0;
            }
            _ => {
                b[k + 1] += ck / (2.0 * (k + 1) as f64);
                b[k - 1] -= ck / (2.0 * (k - 1) as f64);
            }
        }
    }
    let at_minus_one: f64 = b.iter().enumerate().map(|(k, v)| if k % 2 == 0 { *v } else { -*v }).sum();
    b[0] -= at_minus_one;
    b
}

impl Cheb {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        let nodes: Vec<f64> = (0..=n).map(|j| a + (b - a) * 0.5 * (1.0 + unit_t(n, j))).collect();
        let half = 0.5 * (b - a);
        let mut q = vec![0.0; (n + 1) * (n + 1)];
        for j in 0..=n {
            let mut e = vec![0.0; n + 1];
            e[j] = 1.0;
            let anti = antiderivative(&coeffs(&e));
            for i in 0..=n {
                q[i * (n + 1) + j] = half * clenshaw(&anti, unit_t(n, i));
            }
        }
        Self { n, a, b, nodes, q }
    }

    /// Node values of `∫_a^x f`.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let m = self.n + 1;
        (0..m).map(|i| self.q[i * m..(i + 1) * m].iter().zip(f).map(|(q, v)| q * v).sum()).collect()
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - self.a - self.b) / (self.b - self.a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_exp() {
        let ch = Cheb::new(32, 0.0, 2.0);
        let f: Vec<f64> = ch.nodes.iter().map(|x| x.exp()).collect();
        let cf = ch.cumulative(&f);
        for (x, v) in ch.nodes.iter().zip(&cf) {
            assert!((v - (x.exp() - 1.0)).abs() < 1e-13, "{x} {v}");
        }
    }

    #[test]
    fn interpolation() {
        let ch = Cheb::new(24, -1.0, 3.0);
        let f: Vec<f64> = ch.nodes.iter().map(|x| (x * 1.3).sin()).collect();
        let c = coeffs(&f);
        let v = clenshaw(&c, ch.to_unit(0.77));
        assert!((v - (0.77f64 * 1.3).sin()).abs() < 1e-13);
    }
}
