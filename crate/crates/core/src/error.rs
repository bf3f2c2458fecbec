use thiserror::Error;

/// Errors raised by the solvers and assemblers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate grid: need at least 3 nodes per axis, got {0}")]
    DegenerateGrid(usize),

    #[error("origin not interior: bounds {lo}..{hi} on axis {axis} must contain 0 strictly inside")]
    OriginNotInterior { axis: usize, lo: f64, hi: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("kernel positivity violated: {kernel}({i},{j}) = {value}")]
    KernelPositivity {
        kernel: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("weight not integrable: γ₁ undefined ({0})")]
    NotIntegrable(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid preset: {0}")]
    InvalidPreset(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no convergence in {solver} after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("no positive speed: population does not persist (λ₁ = {0})")]
    NoPositiveSpeed(f64),

    #[error("subcritical speed: positive front does not exist (c = {c} < 2√r = {cmin})")]
    SubcriticalSpeed { c: f64, cmin: f64 },

    #[error("normalization bracket failed, increase l ({0})")]
    BracketFailed(String),

    #[error("reduce dt: dt·rate = {0} exceeds 0.5")]
    TimeStepTooLarge(f64),

    #[error("widen range: no sign change of det(A − ΛI) in [{lo}, {hi}]")]
    WidenRange { lo: f64, hi: f64 },

    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
