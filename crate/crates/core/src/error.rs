use thiserror::Error;

use crate::qbd::FixedPoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("invalid rate profile: {0}")]
    InvalidProfile(String),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("generator has no unique stationary vector: {0}")]
    NoUniqueStationaryVector(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("no service transition out of the floor level {level}")]
    NoServiceAtFloor { level: i32 },

    #[error("no arrival transition out of the ceiling level {level}")]
    NoArrivalAtCeiling { level: i32 },

    #[error("level {level} outside [{min}, {max}]")]
    LevelOutOfRange { level: i32, min: i32, max: i32 },

    #[error("retry series diverges at level {level}, phase {phase} (ratio {ratio})")]
    RetrySeriesDivergence {
        level: i32,
        phase: usize,
        ratio: f64,
    },

    #[error("block elimination failed: singular matrix at level {level}")]
    FactorizationFailure { level: i32 },

    #[error("censored boundary generator does not have a one-dimensional null space")]
    DegenerateBoundary,

    #[error("fixed-point iteration did not converge after {} iterations (residual {:.3e})", .best.iterations, .best.residual)]
    NotConverged { best: Box<FixedPoint> },

    #[error("fixed-point iteration failed at iteration {iteration}: {source}")]
    IterationFailed {
        iteration: usize,
        iterate: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("integration aborted at t = {time}: {reason}")]
    IntegrationAborted { time: f64, reason: String },

    #[error("no steady state by t = {t_max} (derivative norm {derivative_norm:.3e})")]
    NoSteadyState { t_max: f64, derivative_norm: f64 },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
