use thiserror::Error;

/// Errors produced anywhere in the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("normalization fit error: {0}")]
    Fit(String),

    #[error("mask generation error: {0}")]
    Generation(String),

    #[error("baseline error: {0}")]
    Baseline(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("dataset contains no eligible transitions")]
    EmptyDataset,

    #[error("training diverged at step {step}: loss = {loss} ({detail})")]
    TrainingDiverged { step: usize, loss: f64, detail: String },

    #[error("sampling diverged: {0}")]
    SamplingDiverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            context,
            expected,
            got,
        }
    }

    /// True for errors caused by bad user input or configuration rather than I/O.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Config(_) | Error::Shape { .. } | Error::Contract(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
