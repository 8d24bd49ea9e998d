use alloc::string::String;

/// Errors raised by the scoring engine.
///
/// Variants map onto the failure classes callers need to tell apart: bad
/// container contents (`Schema`, `Format`, `Data`), bad lookups or arguments,
/// numerical degeneracies, and metrics that are undefined for the input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("format error in blob `{blob}`: {detail}")]
    Format { blob: String, detail: String },
    #[error("data error in image `{image_id}` layer {layer}: {detail}")]
    Data {
        image_id: String,
        layer: u32,
        detail: String,
    },
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("synthetic spec error: {0}")]
    Spec(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! arg_err {
    ($($t:tt)*) => {
        $crate::error::Error::Argument(alloc::format!($($t)*))
    };
}
pub(crate) use arg_err;
