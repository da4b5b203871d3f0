use thiserror::Error;

/// Errors raised by the sampling core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gradient noise {noise} is not supported by {model} models")]
    UnsupportedNoise {
        noise: &'static str,
        model: &'static str,
    },

    /// A non-finite position or momentum appeared during integration.
    #[error("trajectory diverged at leapfrog step {step}{}{}",
        .iteration.map(|i| format!(", iteration {i}")).unwrap_or_default(),
        .node.map(|n| format!(", node {n}")).unwrap_or_default())]
    Diverged {
        step: usize,
        iteration: Option<usize>,
        node: Option<usize>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid stepsize schedule: {0}")]
    InvalidSchedule(String),

    #[error("degenerate schedule: contraction factor is 1 (zero integration time)")]
    DegenerateSchedule,

    #[error("invalid contraction: mu*(K*eta)^2 = {0} must be < 4")]
    InvalidContraction(f64),

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Diverged { step, node, .. } => Error::Diverged {
                step,
                iteration: Some(iteration),
                node,
            },
            other => other,
        }
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        match self {
            Error::Diverged {
                step, iteration, ..
            } => Error::Diverged {
                step,
                iteration,
                node: Some(node),
            },
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
