use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Param(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("series diverged at term {term} (|λ|·p·m = {product:.3e}); use the ode method")]
    SeriesDivergence { term: usize, product: f64 },
    #[error("ode integration failed: {0}")]
    Ode(String),
    #[error("{what} disagree: {a:.17e} vs {b:.17e}")]
    Consistency { what: String, a: f64, b: f64 },
    #[error("ratio recursion not converged at depth {depth} (change {change:.3e})")]
    Truncation { depth: usize, change: f64 },
    #[error("censoring rate {rate:.4} exceeds the allowed {max:.4}; raise the horizon")]
    Censoring { rate: f64, max: f64 },
    #[error("supremum attained at the most negative grid point λ = {lambda}; extend the grid")]
    GridTooShort { lambda: f64 },
    #[error("no sign change while bracketing: {0}")]
    Bracket(String),
    #[error("stability violation at t = {t}: u = {value:.17e}; use a smaller dt")]
    Stability { t: f64, value: f64 },
    #[error("front within {margin} of the domain end at t = {t}; use a longer channel")]
    DomainExhausted { t: f64, margin: f64 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("channel file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
