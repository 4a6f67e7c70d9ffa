use thiserror::Error;

/// Errors produced by the simulation and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("walk exceeded the step cap of {cap} steps for a single particle")]
    StepCapExceeded { cap: u64 },

    #[error("dimension {0} is not supported by this operation")]
    UnsupportedDimension(usize),

    #[error("time parameter must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("history covers t = {have}, but the operation needs t = {needed}")]
    InsufficientHistory { needed: f64, have: f64 },

    #[error("reference field was relaxed at t = {reference} but the history is queried at t = {requested}")]
    MismatchedTime { reference: f64, requested: f64 },

    #[error("cluster does not cover the support annulus out to radius {radius}")]
    ClusterTooSmall { radius: f64 },

    #[error("polynomial is not discrete harmonic")]
    NotDiscreteHarmonic,

    #[error("polynomial does not vanish at the origin")]
    NonzeroAtOrigin,

    #[error("adaptive quadrature failed to converge to the requested tolerance")]
    QuadratureNonConvergence,

    #[error("sample set is degenerate (zero variance or too few samples)")]
    DegenerateSamples,

    #[error("sandpile relaxation hit the iteration cap before the residual dropped below {tol}")]
    RelaxationIterationCap { tol: f64 },

    #[error("undefined mode variance: {0}")]
    UndefinedMode(String),

    #[error("{failed} of {total} trials failed (more than the allowed fraction)")]
    TrialFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
