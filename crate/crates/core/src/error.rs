use thiserror::Error;

/// Errors raised by the rectification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error(
        "warp out of bounds: {corner} window corner maps to ({x:.3}, {y:.3}), \
         scene is {width}x{height} (allowed margin {margin} px)"
    )]
    OutOfBounds {
        corner: &'static str,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
        margin: f64,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate Jacobian: norm {norm:e} is numerically zero")]
    DegenerateJacobian { norm: f64 },

    #[error("Gram matrix J*J could not be factorized even with ridge")]
    GramFactorization,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{solver} diverged at iteration {iteration}")]
    Divergence {
        solver: &'static str,
        iteration: usize,
    },

    #[error("texture kind {kind} cannot have rank {rank}")]
    InfeasibleRank { kind: &'static str, rank: usize },

    #[error("outer round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no initialization angle is feasible (feasible subset: {feasible:?})")]
    NoFeasibleAngle { feasible: Vec<f64> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}
