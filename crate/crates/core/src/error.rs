use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("{op}: wrong number of inputs (expected {expected}, got {got})")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("loss must have shape [1], got {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("forward function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("every position is masked")]
    AllMasked,
    #[error("instance `{id}`: {field} is empty after tokenization")]
    EmptySequence { id: String, field: &'static str },
    #[error("instance `{id}`: {field} has {tokens} tokens but {tags} tags")]
    TagLength {
        id: String,
        field: &'static str,
        tokens: usize,
        tags: usize,
    },
    #[error("word vectors: expected dimension {expected}, found {found} on line {line}")]
    VectorDimension {
        expected: usize,
        found: usize,
        line: usize,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("question `{id}` has {count} choices, expected 2")]
    ChoiceCount { id: String, count: usize },
    #[error("no predictions to combine")]
    EmptyPredictions,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("layer shape mismatch for: {0:?}")]
    LayerShapes(Vec<String>),
    #[error("stream kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}
