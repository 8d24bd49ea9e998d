use std::io;
use std::path::PathBuf;

/// Failures of the command-line front end, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: pa_core::Error,
    },
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bank cache {}: {detail}", path.display())]
    Cache { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_METRIC_UNDEFINED: i32 = 4;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags a core error with the pipeline stage that raised it.
    pub fn stage(stage: &'static str) -> impl FnOnce(pa_core::Error) -> Self {
        move |source| Error::Stage { stage, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => EXIT_CONFIG,
            Error::Stage {
                source: pa_core::Error::Argument(_) | pa_core::Error::Spec(_),
                ..
            } => EXIT_CONFIG,
            Error::Stage {
                source: pa_core::Error::MetricUndefined(_),
                ..
            } => EXIT_METRIC_UNDEFINED,
            Error::Stage { .. } | Error::Io { .. } | Error::Cache { .. } => EXIT_DATA,
        }
    }
}
