use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum UdllError {
    /// Tensor or matrix dimensions do not line up for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A parameter value is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// A dataset, graph, or checkpoint file failed validation.
    #[error("data error: {0}")]
    Data(String),

    /// Run configuration is invalid or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// The eigensolver hit its iteration cap.
    #[error("eigensolver did not converge: off-diagonal residual {residual:e}")]
    NoConvergence { residual: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
