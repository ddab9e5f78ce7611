//! Reference solvers used by the validation suite.
//!
//! These deliberately avoid the basic-pair, S-integral and ratio machinery of
//! [`crate::sturm`]: edges are integrated with fixed-step RK4 in plain x and
//! the junction system is assembled and solved as one dense linear system.

use nalgebra::{DMatrix, DVector};

use crate::channel::Cell;
use crate::error::{Error, Result};
use crate::profile::Width;

/// RK4 for `u' = v/l`, `v' = 2κ l u` in plain x over `[0, len]`, with `x`
/// read from the end when `from_end`. Returns `(u, v)` at the far end.
pub fn rk4_edge(w: &dyn Width, from_end: bool, kappa: f64, init: [f64; 2], steps: usize) -> [f64; 2] {
    let len = w.length();
    let l = |x: f64| w.width(if from_end { len - x } else { x });
    let f = |x: f64, y: [f64; 2]| {
        let lx = l(x);
        let du = if lx > 0.0 { y[1] / lx } else { 0.0 };
        [du, 2.0 * kappa * lx * y[0]]
    };
    let h = len / steps as f64;
    let mut y = init;
    for i in 0..steps {
        let x = i as f64 * h;
        let k1 = f(x, y);
        let k2 = f(x + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f(x + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f(x + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for j in 0..2 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Steps per edge for the RK4 reference.
pub const RK4_STEPS: usize = 20_000;

/// Values `u(X_j)` at junctions `1..n-1` of `n` outward cells for
/// `E e^{λT}`, with `u = 1` at the inner end and `u = 0` at the end of
/// spine `n`. Unknowns are `(u, D_p u)` at each spine start and one scale
/// factor per wing; equations are continuity, the width-weighted flux
/// balance and the boundary values.
pub fn dense_junction_solve(cells: &[Cell], lambda: f64) -> Result<Vec<f64>> {
    let n = cells.len();
    if n < 2 {
        return Err(Error::Domain("need at least two cells".into()));
    }
    if lambda > 0.0 {
        return Err(Error::Domain("λ ≤ 0 required".into()));
    }
    let kappa = -lambda;
    // Spine transfer: columns from u(0) = 1, D_p u(0) = 0 and u(0) = 0, D_p u(0) = 1.
    let spine: Vec<([f64; 2], [f64; 2])> = cells
        .iter()
        .map(|c| {
            (
                rk4_edge(&c.spine_profile, false, kappa, [1.0, 0.0], RK4_STEPS),
                rk4_edge(&c.spine_profile, false, kappa, [0.0, 1.0], RK4_STEPS),
            )
        })
        .collect();
    // Wing solution from the tip with zero flux there, evaluated at the attachment.
    let wing: Vec<[f64; 2]> = cells[..n - 1]
        .iter()
        .map(|c| rk4_edge(&c.wing_profile, true, kappa, [1.0, 0.0], RK4_STEPS))
        .collect();
    let size = 3 * n - 1;
    let a_idx = |k: usize| 2 * k;
    let b_idx = |k: usize| 2 * k + 1;
    let c_idx = |k: usize| 2 * n + k;
    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    let mut row = 0;
    m[(row, a_idx(0))] = 1.0;
    rhs[row] = 1.0;
    row += 1;
    for k in 0..n - 1 {
        let c = &cells[k];
        let (phi, psi) = spine[k];
        // u_L(end) = u_R(0)
        m[(row, a_idx(k))] = phi[0];
        m[(row, b_idx(k))] = psi[0];
        m[(row, a_idx(k + 1))] = -1.0;
        row += 1;
        // u_L(end) = c_k f(att)
        m[(row, a_idx(k))] = phi[0];
        m[(row, b_idx(k))] = psi[0];
        m[(row, c_idx(k))] = -wing[k][0];
        row += 1;
        // α u_L' = β u_R' + γ ∂_d u_W, with u' = D_p u / l and ∂_d = -∂_tip
        let l_lend = c.spine_profile.end_width();
        let l_r0 = cells[k + 1].spine_profile.start_width();
        let l_att = c.gamma;
        m[(row, a_idx(k))] = c.alpha * phi[1] / l_lend;
        m[(row, b_idx(k))] = c.alpha * psi[1] / l_lend;
        m[(row, b_idx(k + 1))] = -c.beta / l_r0;
        m[(row, c_idx(k))] = c.gamma * wing[k][1] / l_att;
        row += 1;
    }
    let (phi, psi) = spine[n - 1];
    m[(row, a_idx(n - 1))] = phi[0];
    m[(row, b_idx(n - 1))] = psi[0];
    row += 1;
    debug_assert_eq!(row, size);
    let sol = m.lu().solve(&rhs).ok_or_else(|| Error::Domain("singular junction system".into()))?;
    Ok((1..n).map(|k| sol[a_idx(k)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::WidthProfile;

    #[test]
    fn rk4_cosh() {
        let w = WidthProfile::constant(1.0, 1.0);
        let y = rk4_edge(&w, false, 0.5, [1.0, 0.0], 2000);
        assert!((y[0] - 1f64.cosh()).abs() < 1e-12);
    }
}
