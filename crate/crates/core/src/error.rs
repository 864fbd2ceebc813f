use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is singular or ill-conditioned (pivot {pivot:.3e} at column {column})")]
    Singular { pivot: f64, column: usize },

    #[error("power iteration did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("matrix is not Hurwitz: {0}")]
    NotHurwitz(String),

    #[error("state diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDivergence { epoch: usize, loss: f64 },

    #[error(
        "requested {requested} samples but only {available} grid points lie in the sampling window"
    )]
    InsufficientGrid { requested: usize, available: usize },

    #[error("split would leave an empty partition ({train} train / {val} validation)")]
    EmptyPartition { train: usize, val: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset was generated with sigma = {0}; a noiseless dataset is required")]
    NoisyDataset(f64),

    #[error("sweep cell gamma = {gamma}, sigma_train = {sigma}: {source}")]
    SweepCell {
        gamma: f64,
        sigma: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// A structurally equal copy; I/O and JSON errors keep their kind and message.
    pub fn duplicate(&self) -> Error {
        match self {
            Error::DimensionMismatch {
                context,
                expected,
                actual,
            } => Error::DimensionMismatch {
                context,
                expected: *expected,
                actual: *actual,
            },
            Error::NonFinite(w) => Error::NonFinite(w),
            Error::Singular { pivot, column } => Error::Singular {
                pivot: *pivot,
                column: *column,
            },
            Error::NonConvergence { iterations } => Error::NonConvergence {
                iterations: *iterations,
            },
            Error::NotHurwitz(s) => Error::NotHurwitz(s.clone()),
            Error::Divergence { time } => Error::Divergence { time: *time },
            Error::TrainingDivergence { epoch, loss } => Error::TrainingDivergence {
                epoch: *epoch,
                loss: *loss,
            },
            Error::InsufficientGrid {
                requested,
                available,
            } => Error::InsufficientGrid {
                requested: *requested,
                available: *available,
            },
            Error::EmptyPartition { train, val } => Error::EmptyPartition {
                train: *train,
                val: *val,
            },
            Error::InvalidArgument(s) => Error::InvalidArgument(s.clone()),
            Error::NoisyDataset(s) => Error::NoisyDataset(*s),
            Error::SweepCell {
                gamma,
                sigma,
                source,
            } => Error::SweepCell {
                gamma: *gamma,
                sigma: *sigma,
                source: Box::new(source.duplicate()),
            },
            Error::Parse { what, detail } => Error::Parse {
                what,
                detail: detail.clone(),
            },
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), e.to_string())),
            Error::Json(e) => Error::Parse {
                what: "JSON",
                detail: e.to_string(),
            },
        }
    }

    /// True for failures that come from the numerics rather than from inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::NonConvergence { .. }
            | Error::Divergence { .. }
            | Error::TrainingDivergence { .. } => true,
            Error::SweepCell { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
