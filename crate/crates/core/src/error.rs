use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver did not converge within {sweeps} sweeps (off-diagonal mass {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("index {index} out of range for {len} users")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in layer {layer}, pgd step {step}")]
    NonFinite { layer: usize, step: usize },

    #[error("corrupt step-size file {path}: {reason}")]
    CorruptArtifact { path: PathBuf, reason: String },

    #[error("unsupported step-size format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("step-size shape mismatch: file has {found:?}, expected {expected:?}")]
    ShapeMismatch {
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("unknown figure {0} (expected 2, 3, 4 or 5)")]
    UnknownFigure(u32),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable snake_case tag for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NoConvergence { .. } => "no_convergence",
            Error::NotHermitian(_) => "not_hermitian",
            Error::NotPsd(_) => "not_psd",
            Error::Degenerate(_) => "degenerate",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidConfig(_) => "invalid_config",
            Error::NonFinite { .. } => "non_finite",
            Error::CorruptArtifact { .. } => "corrupt_artifact",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::UnknownFigure(_) => "unknown_figure",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}
