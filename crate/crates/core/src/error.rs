use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, networks, training and artifact IO.
#[derive(Debug)]
pub enum Error {
    /// Two tensors had incompatible shapes for the attempted operation.
    ShapeMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A configuration value or argument failed validation.
    InvalidArgument(String),
    /// A non-finite value (NaN/Inf) entered a numeric computation.
    NonFinite { context: String },
    /// Training aborted; carries the step index where the fault surfaced.
    TrainingFault { step: u64, context: String },
    /// The probe classifier is below the trust threshold, so evaluation
    /// results would be meaningless.
    ProbeUntrusted { accuracy: f64, required: f64 },
    /// Filesystem failure, annotated with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// A persisted artifact could not be decoded; offset is the byte
    /// position where reading failed.
    Format { path: PathBuf, offset: u64, detail: String },
    /// Checkpoint was produced under a different configuration.
    ConfigDigestMismatch { expected: String, found: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by bad user input rather than runtime faults.
    /// The CLI maps these to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::ShapeMismatch { .. }
                | Error::ConfigDigestMismatch { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, left, right } => {
                write!(f, "{context}: shape mismatch {left:?} vs {right:?}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::TrainingFault { step, context } => {
                write!(f, "training fault at step {step}: {context}")
            }
            Error::ProbeUntrusted { accuracy, required } => write!(
                f,
                "probe accuracy {accuracy:.4} below trust threshold {required:.2}; evaluation refused"
            ),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Format { path, offset, detail } => write!(
                f,
                "malformed file {} at offset {offset}: {detail}",
                path.display()
            ),
            Error::ConfigDigestMismatch { expected, found } => write!(
                f,
                "config digest mismatch: checkpoint was written under {found}, current config is {expected}; pass an explicit override to resume anyway"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
