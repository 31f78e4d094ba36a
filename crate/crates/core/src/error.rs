use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("{what} is not a rotation (orthonormality error {error:e}, determinant {det})")]
    NotRotation { what: String, error: f64, det: f64 },
    #[error("no visible support for instance in view")]
    EmptyMask,
    #[error("view has no feature map")]
    MissingFeatureMap,
    #[error("cannot normalize a zero or non-finite vector")]
    DegenerateVector,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("duplicate class name {0:?}")]
    DuplicateName(String),
    #[error("invalid proposal {index}: {reason}")]
    InvalidProposal { index: usize, reason: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("no agreeing view for the pseudo-label")]
    NoAgreeingView,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, CoreError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> CoreError {
    CoreError::InvalidParam {
        name,
        reason: reason.into(),
    }
}
