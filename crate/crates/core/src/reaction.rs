//! Reaction terms `f(u)`.

use serde::{Deserialize, Serialize};

/// A KPP-type nonlinearity: `f(0) = f(1) = 0`, `0 ≤ f(u) ≤ f'(0) u`.
pub trait Reaction: Send + Sync {
    fn f(&self, u: f64) -> f64;
    fn fprime0(&self) -> f64;
    /// Lipschitz constant on `[0, 1]`.
    fn lipschitz(&self) -> f64;
    /// `c(u) = f(u)/u` with `c(0) = f'(0)`.
    fn c(&self, u: f64) -> f64 {
        if u.abs() < 1e-300 {
            self.fprime0()
        } else {
            self.f(u) / u
        }
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct NoReaction;

impl Reaction for NoReaction {
    fn f(&self, _u: f64) -> f64 {
        0.0
    }
    fn fprime0(&self) -> f64 {
        0.0
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn c(&self, _u: f64) -> f64 {
        0.0
    }
}

/// `f(u) = r u (1 - u)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Kpp {
    pub rate: f64,
}

impl Default for Kpp {
    fn default() -> Self {
        Kpp { rate: 1.0 }
    }
}

impl Reaction for Kpp {
    fn f(&self, u: f64) -> f64 {
        self.rate * u * (1.0 - u)
    }
    fn fprime0(&self) -> f64 {
        self.rate
    }
    fn lipschitz(&self) -> f64 {
        self.rate
    }
    fn c(&self, u: f64) -> f64 {
        self.rate * (1.0 - u)
    }
}
