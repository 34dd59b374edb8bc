//! Error type shared by every solver stage.

use thiserror::Error;

/// Errors raised by the guidance solver and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate segment: t_end ({t_end}) must exceed t_start ({t_start})")]
    DegenerateSegment { t_start: f64, t_end: f64 },

    #[error("time {t} lies outside the trajectory domain [{t0}, {tf}]")]
    Domain { t: f64, t0: f64, tf: f64 },

    #[error("infeasible thrust profile: mass {mass} kg at t = {t} s is at or below the floor {floor} kg")]
    InfeasibleProfile { t: f64, mass: f64, floor: f64 },

    #[error("singular velocity costate: ||lambda_v|| = {norm:e} below floor at t = {t} s")]
    SingularCostate { norm: f64, t: f64 },

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("rank-deficient least-squares system; offending columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("inner solve diverged after {iterations} iterations (L2 residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("inner solve failed at times {times:?}: {source}")]
    InnerFailure {
        times: Vec<f64>,
        #[source]
        source: Box<GuidanceError>,
    },

    #[error("switching-time loop did not converge after {iterations} iterations; best times {best_times:?}, residual {residual:?}")]
    OuterNonConvergence {
        iterations: usize,
        best_times: Vec<f64>,
        residual: Vec<f64>,
    },

    #[error("switching times collapsed ({times:?}); the thrust profile is probably wrong")]
    TimeOrdering { times: Vec<f64> },

    #[error("no thrust profile has a consistent switching-function sign pattern: {diagnostics}")]
    Classification { diagnostics: String },

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, GuidanceError>;
