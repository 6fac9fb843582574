use thiserror::Error;

#[derive(Debug, Error)]
pub enum IbgError {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate weight configuration: {0}")]
    Degenerate(String),
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("optimization diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IbgError>;
