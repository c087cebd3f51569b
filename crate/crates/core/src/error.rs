use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid box: width and height must be positive")]
    InvalidBox,
    #[error("pose area must be positive for OKS")]
    ZeroArea,
    #[error("ground truth has no labeled keypoints")]
    NoLabeledKeypoints,
    #[error("unknown image id {0}")]
    UnknownImage(u64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl Error {
    pub(crate) fn dims(expected: impl core::fmt::Display, actual: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
