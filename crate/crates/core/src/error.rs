use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration or arguments.
    Usage,
    /// Malformed, inconsistent or missing data.
    DataIntegrity,
    /// A generation provider failed.
    Provider,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::DataIntegrity => 2,
            ErrorKind::Provider => 3,
        }
    }
}

/// Failure talking to a text-generation provider.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider call failed after {attempts} attempt(s): {message}")]
    Failed { attempts: u32, message: String },
    #[error("provider timed out after {attempts} attempt(s) ({timeout_ms} ms budget)")]
    Timeout { attempts: u32, timeout_ms: u64 },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("invalid provider spec `{0}`")]
    InvalidSpec(String),
}

impl ProviderError {
    /// Whether another attempt could succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, ProviderError::Failed { .. } | ProviderError::Timeout { .. })
    }

    pub(crate) fn with_attempts(self, n: u32) -> Self {
        match self {
            ProviderError::Failed { message, .. } => ProviderError::Failed { attempts: n, message },
            ProviderError::Timeout { timeout_ms, .. } => ProviderError::Timeout { attempts: n, timeout_ms },
            other => other,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    // knowledge base
    #[error("duplicate species_id `{id}` (records {first} and {second})")]
    DuplicateSpecies { id: String, first: usize, second: usize },
    #[error("record stream is empty")]
    EmptyKnowledgeBase,
    #[error("species `{id}` lists {count} anchors, at most 3 are allowed")]
    TooManyAnchors { id: String, count: usize },
    #[error("record {index} has an empty species_id")]
    EmptySpeciesId { index: usize },
    #[error("invalid chunk config: max_chunk_words={max}, overlap_words={overlap}")]
    InvalidChunkConfig { max: usize, overlap: usize },
    #[error("species `{species_id}` has no {field}")]
    MissingField { species_id: String, field: &'static str },
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    // embeddings
    #[error("dimension mismatch for `{item_id}`: expected {expected}, found {found}")]
    DimMismatch { item_id: String, expected: usize, found: usize },
    #[error("non-finite component in `{item_id}`")]
    NonFinite { item_id: String },
    #[error("zero-norm vector `{item_id}` cannot be normalized")]
    ZeroNorm { item_id: String },
    #[error("duplicate item_id `{item_id}` for encoder `{encoder_id}`")]
    DuplicateItem { encoder_id: String, item_id: String },
    #[error("bad magic bytes {found:?}, expected \"VREB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported embedding format version {0}")]
    UnsupportedVersion(u16),
    #[error("file is for encoder `{found}`, expected `{expected}`")]
    EncoderMismatch { expected: String, found: String },
    #[error("embedding file truncated: {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the declared record count")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in item id")]
    InvalidUtf8,
    #[error("missing embedding for encoder `{encoder_id}`, item `{item_id}`")]
    MissingEmbedding { encoder_id: String, item_id: String },
    #[error("unknown encoder `{0}`")]
    UnknownEncoder(String),
    #[error("invalid encoder profile: {0}")]
    InvalidProfile(String),

    // ranking
    #[error("nothing to rank")]
    EmptyScores,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("anchor `{anchor_id}` of species `{species_id}` is missing from the store")]
    MissingAnchor { species_id: String, anchor_id: String },

    // evaluation
    #[error("query `{0}` has no ground truth and cannot be scored")]
    MissingGroundTruth(String),
    #[error("query id mismatch between rankings and predictions: `{ranking}` vs `{prediction}`")]
    QueryMismatch { ranking: String, prediction: String },
    #[error("duplicate query_id `{0}`")]
    DuplicateQuery(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidChunkConfig { .. } | Error::InvalidConfig(_) | Error::InvalidProfile(_) => {
                ErrorKind::Usage
            }
            Error::Provider(ProviderError::InvalidSpec(_)) => ErrorKind::Usage,
            Error::Provider(_) => ErrorKind::Provider,
            _ => ErrorKind::DataIntegrity,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
