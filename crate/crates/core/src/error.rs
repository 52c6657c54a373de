use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("m² = {m2} outside the admissible range [{lo}, {hi}]")]
    OutOfRange { m2: f64, lo: f64, hi: f64 },

    #[error("series not converged after {terms} terms (last contraction ratio {ratio:.3e})")]
    SeriesNotConverged { terms: usize, ratio: f64 },

    #[error("non-finite kernel value for mode {mode} at m² = {m2}")]
    NonFinite { mode: i64, m2: f64 },

    #[error("need ≥ 4 points for cubic spline, got {0}")]
    TooFewPoints(usize),

    #[error("seminorm order {order} too large for grid ({points} points along an axis, max order {max})")]
    OrderTooLarge { order: usize, points: usize, max: usize },

    #[error("incompatible boundary data: corner mismatch {mismatch:.3e}")]
    Incompatible { mismatch: f64 },

    #[error("conductivity window violated: σ = {sigma:.6e} < c = {c:.6e} at node ({i}, {j})")]
    SigmaWindow { sigma: f64, c: f64, i: usize, j: usize },

    #[error("∂²φũ = {m2:.6e} at node ({i}, {j}) leaves the tabulated range [{lo}, {hi}]")]
    TableRange { m2: f64, lo: f64, hi: f64, i: usize, j: usize },

    #[error("σ-window not satisfied: {0}")]
    Window(String),

    #[error("stalled at t = {t:.4}: residual {residual:.6e} has not decreased for {patience} steps")]
    Stalled { t: f64, residual: f64, patience: usize },

    #[error("inner Newton failed at k-step {step}: residual {residual:.3e}")]
    InnerNewton { step: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
