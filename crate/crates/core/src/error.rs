use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// All three vertex level-set values of an element lie within the snap
    /// tolerance of zero, so no interface segment can be reconstructed.
    #[error("degenerate interface in element {element}: all vertex level-set values within snap tolerance")]
    DegenerateInterface { element: usize },

    /// The stiffness matrix lost positive definiteness during factorization.
    #[error("factorization hit a non-positive pivot at row {row} (value {pivot:.3e}); the Nitsche penalty is likely too small, retry with a larger gamma")]
    PenaltyTooSmall { row: usize, pivot: f64 },

    #[error("singular or numerically unsolvable system: {0}")]
    SingularSystem(String),

    /// A node-patch system for the local multipliers did not reach the
    /// required residual. Signals an assembly bug: compatibility is
    /// guaranteed when u_h solves the primal problem.
    #[error("multiplier patch at node {node} (subdomain {subdomain}) inconsistent: residual {residual:.3e} > {tolerance:.3e}")]
    PatchInconsistency {
        subdomain: u8,
        node: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("problem too large for dense computation: {actual} DOFs exceeds guard {limit}")]
    SizeGuardExceeded { actual: usize, limit: usize },

    #[error("adaptive iteration {iteration}: {source}")]
    AdaptiveStage {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AdaptiveStage {
            iteration,
            source: Box::new(self),
        }
    }
}
