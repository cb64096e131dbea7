use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    // text frontend
    #[error("duplicate symbol {symbol:?} in {file}")]
    DuplicateSymbol { symbol: String, file: String },

    #[error("{file} declares {declared} symbols but lists {found}")]
    SymbolCount {
        file: String,
        declared: usize,
        found: usize,
    },

    #[error("word {0:?} is not in the lexicon")]
    UnknownWord(String),

    #[error("character {0:?} has no romanization")]
    UnknownCharacter(char),

    #[error("symbol {symbol:?} has no mapping in {table}")]
    UnmappedSymbol { symbol: String, table: String },

    #[error("id {id} out of range for {table} table of size {size}")]
    IdOutOfRange { id: u32, table: String, size: usize },

    // prompt encoder
    #[error("prompt encoder backend unavailable: {0}")]
    MissingBackend(String),

    #[error("prompt encoding failed: {0}")]
    EncodeFailure(String),

    #[error("prompt cache miss for key {0}")]
    CacheMiss(String),

    #[error("corrupted prompt cache {path}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    // training / checkpoints
    #[error("manifest errors:\n{}", .0.join("\n"))]
    Manifest(Vec<String>),

    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: String, step: u64 },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("parameter {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("audio: {0}")]
    Audio(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::Shape {
            context: context.to_string(),
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
