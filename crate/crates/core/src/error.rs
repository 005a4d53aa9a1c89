use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary is empty")]
    EmptyVocabulary,

    #[error("duplicate token symbol `{0}`")]
    DuplicateSymbol(String),

    #[error("tokens `{0}` and `{1}` share the same embedding vector")]
    DuplicateEmbedding(String, String),

    #[error("unknown token symbol `{0}`")]
    UnknownToken(String),

    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(usize),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("value closure violated: W_V maps token `{0}` outside the vocabulary")]
    ClosureViolation(String),

    #[error("ambiguous value match: W_V image of `{token}` is within tolerance of both `{first}` and `{second}`")]
    AmbiguousMatch {
        token: String,
        first: String,
        second: String,
    },

    #[error("feed-forward table has no entry for token `{0}`")]
    IncompleteFfn(String),

    #[error("text is empty")]
    EmptyText,

    #[error("transformer stack has no blocks")]
    EmptyStack,

    #[error("sequence of length {length} exceeds what truncation M = {truncation} allows")]
    TruncationExceeded { length: usize, truncation: usize },

    #[error("truncation must be at least 1")]
    ZeroTruncation,

    #[error("dense dimension {dim} exceeds the guard of {limit}")]
    DimensionGuard { dim: usize, limit: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("outcome `{0}` has zero probability; reduction is undefined")]
    ZeroProbabilityOutcome(String),

    #[error("Choi matrix is not Hermitian (deviation {0:e})")]
    NonHermitianChoi(f64),

    #[error("trajectory count must be at least 1")]
    NoTrajectories,

    #[error("malformed model config: {0}")]
    Config(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
