use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("unsupported regime: {0}")]
    Regime(String),

    #[error("moment-based quantity unavailable: {0}")]
    MomentsDiverge(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("negative initial density {value} at r = {r}")]
    NegativeDensity { r: f64, value: f64 },

    #[error("initial datum has zero total mass")]
    ZeroMass,

    #[error("invalid time: {0}")]
    InvalidTime(String),

    #[error("stiffness failure: stable step {dt:e} is below dt_min = {dt_min:e}")]
    Stiffness { dt: f64, dt_min: f64 },

    #[error("instability at t = {t}: |u| = {value:e} exceeds 10x the initial maximum {limit:e}")]
    Instability { t: f64, value: f64, limit: f64 },

    #[error("clipped mass {0:e} exceeds the 1e-8 budget")]
    ClippedMass(f64),

    #[error("minimization bracket [{lo}, {hi}] has no interior minimum (argmin {argmin})")]
    Bracket { lo: f64, hi: f64, argmin: f64 },

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
