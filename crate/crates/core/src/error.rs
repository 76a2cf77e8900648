use std::path::PathBuf;

/// Errors produced anywhere in the simulation and analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "input not sorted: record {index} (timestamp {timestamp_ps} ps) precedes its predecessor"
    )]
    Unsorted { index: usize, timestamp_ps: i64 },

    #[error("expected {expected:.3e} events exceeds the memory budget of {budget} events")]
    BudgetExceeded { expected: f64, budget: u64 },

    #[error("no events on channel {channel}")]
    EmptyChannel { channel: u8 },

    #[error("zero counts: {0}")]
    ZeroCounts(&'static str),

    #[error("mode windows overlap: [{a_start}, {a_end}) and [{b_start}, {b_end})")]
    OverlappingWindows {
        a_start: i64,
        a_end: i64,
        b_start: i64,
        b_end: i64,
    },

    #[error("fit did not converge after {iterations} iterations (chi2 {chi2:.6e}, lambda {lambda:.3e}): {reason}")]
    FitDiverged {
        iterations: usize,
        chi2: f64,
        lambda: f64,
        reason: String,
    },

    #[error("corrupt event file at record {index}: {reason}")]
    CorruptRecord { index: usize, reason: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("unknown recipe `{name}`; available: {}", available.join(", "))]
    UnknownRecipe {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
