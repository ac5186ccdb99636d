use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was called on an object in a state that cannot serve it,
    /// e.g. sampling from an empty replay buffer.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Entropic solver ran out of iterations before the transport plan's
    /// marginals matched the inputs.
    #[error("sinkhorn did not converge: marginal residual {residual:.3e} after {iterations} iterations (epsilon {epsilon:.1e})")]
    SinkhornNotConverged {
        residual: f64,
        iterations: usize,
        epsilon: f64,
    },

    /// Fine-tuning tripped the divergence guard.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Figure emission could not find its inputs. Lists every absent file.
    #[error("missing figure inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFigureInputs(Vec<PathBuf>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }
}
