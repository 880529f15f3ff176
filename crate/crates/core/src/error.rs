use alloc::string::String;

/// Errors raised by the core library.
///
/// The `Display` form starts with a stable kebab-case token so that callers
/// (notably the command line) can match on it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dim-mismatch: expected {expected} coordinates, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("bad-latlon: latitude {lat} / longitude {lon} out of range")]
    BadLatLon { lat: f64, lon: f64 },
    #[error("not-sl: integer matrix has determinant {det}, expected 1")]
    NotSl { det: i128 },
    #[error("not-rotation: {0}")]
    NotRotation(String),
    #[error("bad-layout: {0}")]
    BadLayout(String),
    #[error("numeric-overflow: non-finite value in {0}")]
    NumericOverflow(&'static str),
    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no-inflow: star inflow vanishes at the requested state")]
    NoInflow,
    #[error("degenerate-state: terminal and outflow densities both vanish")]
    DegenerateState,
    #[error("backward-stuck: no start point with positive inflow after {attempts} draws (dataset index {index})")]
    BackwardStuck { attempts: usize, index: usize },
    #[error("flow-not-terminating: censor rate {rate:.3} exceeds 0.5")]
    FlowNotTerminating { rate: f64 },
    #[error("training-diverged: non-finite loss at step {step}")]
    TrainingDiverged { step: usize },
    #[error("degenerate-density: density integral {0} is not positive")]
    DegenerateDensity(f64),
    #[error("grid-mismatch: {0}")]
    GridMismatch(String),
    #[error("unknown-toy: {0}")]
    UnknownToy(String),
    #[error("empty-dataset")]
    EmptyDataset,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// The leading kebab-case token of the message.
    pub fn token(&self) -> &'static str {
        match self {
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::BadLatLon { .. } => "bad-latlon",
            Error::NotSl { .. } => "not-sl",
            Error::NotRotation(_) => "not-rotation",
            Error::BadLayout(_) => "bad-layout",
            Error::NumericOverflow(_) => "numeric-overflow",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NoInflow => "no-inflow",
            Error::DegenerateState => "degenerate-state",
            Error::BackwardStuck { .. } => "backward-stuck",
            Error::FlowNotTerminating { .. } => "flow-not-terminating",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::DegenerateDensity(_) => "degenerate-density",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::UnknownToy(_) => "unknown-toy",
            Error::EmptyDataset => "empty-dataset",
            Error::Unsupported(_) => "unsupported",
            Error::InvalidArgument(_) => "invalid-argument",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
