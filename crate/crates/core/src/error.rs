use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: length mismatches, unknown edges, bad distributions.
    #[error("structural error: {0}")]
    Structural(String),
    /// The instance failed validation.
    #[error("instance validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),
    /// An exhaustive routine refused to run past its size guard.
    #[error("capacity guard exceeded: {what} is {actual}, limit {limit}")]
    Capacity { what: String, actual: usize, limit: usize },
    /// An operation was called on an input outside its domain.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A caller-supplied object broke an interface contract (e.g. A > I).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A realization source ran out of values.
    #[error("realization source exhausted: {0}")]
    Exhausted(String),
    /// An internal invariant did not hold.
    #[error("internal invariant breached: {0}")]
    Invariant(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// The innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
