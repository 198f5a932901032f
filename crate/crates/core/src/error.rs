use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),
    #[error("duplicate relation id `{0}`")]
    DuplicateRelation(String),
    #[error("unknown entity `{0}`")]
    MissingEntity(String),
    #[error("knowledge base is empty")]
    EmptyKb,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("property list is empty")]
    EmptyPropertyList,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("invalid span [{start}, {end}) for text of {len} characters")]
    Span { start: usize, end: usize, len: usize },
    #[error("relation `{0}` is not in the relation catalog")]
    Label(String),
    #[error("no valid corruption found after {0} attempts")]
    CorruptionExhausted(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("no annotation for instance `{0}`")]
    Alignment(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
