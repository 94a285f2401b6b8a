use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Rotation angle is too close to pi for the log map to pick a sign.
    #[error("angle near pi: trace(R) = {trace} leaves the rotation axis ambiguous")]
    AngleNearPi { trace: f64 },

    /// Operation requires a non-empty cluster.
    #[error("empty cluster: operation requires N >= 1")]
    EmptyCluster,

    /// Caller-supplied data violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The problem has no constraints at all (no features or no observations).
    #[error("no constraints: problem contains no feature observations")]
    NoConstraints,

    /// Feature has too few points for its cost to be defined.
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    /// Reduced Hessian is singular: the poses are not determined by the features.
    #[error("unobservable problem: reduced Hessian is singular")]
    Unobservable,

    /// Damping escalation failed to produce an acceptable step.
    #[error("stalled: {rejections} consecutive rejections with damping mu = {mu:.3e}")]
    Stalled { rejections: u32, mu: f64 },

    /// A non-finite value appeared where the math guarantees a finite one.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Text-format parse error, located for the user.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
