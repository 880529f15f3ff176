use std::path::PathBuf;

/// Errors of the file-format and command layer.
///
/// Like the core errors, every message starts with a stable token.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] egf_core::Error),
    #[error("config-schema: {0}")]
    ConfigSchema(String),
    #[error("schema-error: {0}")]
    Schema(String),
    #[error("incompatible-checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Error::Core(e) => e.token(),
            Error::ConfigSchema(_) => "config-schema",
            Error::Schema(_) => "schema-error",
            Error::IncompatibleCheckpoint(_) => "incompatible-checkpoint",
            Error::Io { .. } | Error::Csv(_) => "io",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric or training, 5 io.
    pub fn exit_code(&self) -> i32 {
        use egf_core::Error as C;
        match self {
            Error::ConfigSchema(_) => 2,
            Error::Schema(_) | Error::IncompatibleCheckpoint(_) => 3,
            Error::Io { .. } | Error::Csv(_) => 5,
            Error::Core(e) => match e {
                C::NotSl { .. }
                | C::NotRotation(_)
                | C::BadLayout(_)
                | C::ShapeMismatch(_)
                | C::Unsupported(_)
                | C::InvalidArgument(_)
                | C::GridMismatch(_) => 2,
                C::DimMismatch { .. } | C::BadLatLon { .. } | C::UnknownToy(_) | C::EmptyDataset => 3,
                C::NumericOverflow(_)
                | C::NoInflow
                | C::DegenerateState
                | C::BackwardStuck { .. }
                | C::FlowNotTerminating { .. }
                | C::TrainingDiverged { .. }
                | C::DegenerateDensity(_) => 4,
            },
        }
    }
}
