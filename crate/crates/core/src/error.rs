//! Crate-wide error type.

use crate::lang::LanguageTag;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),

    #[error("mixed tokenizer ids: expected `{expected}`, found `{found}`")]
    MixedTokenizers { expected: String, found: String },

    #[error("empty text")]
    EmptyText,

    #[error("empty extraction: no content left after stripping")]
    EmptyExtraction,

    #[error("undecodable payload: {0}")]
    UndecodablePayload(String),

    #[error("unknown language code `{0}`")]
    UnknownLanguage(String),

    #[error("no display name for language `{0}`")]
    UnmappedLanguageName(LanguageTag),

    #[error("language `{0}` not supported by this component")]
    UnsupportedLanguage(LanguageTag),

    #[error("no training sentences for language class `{0}`")]
    MissingLanguageClass(LanguageTag),

    #[error("invalid model file: {0}")]
    InvalidModelFile(String),

    #[error("corrupt record at {path}:{line}: {msg}")]
    CorruptRecord {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("manifest mismatch for {path}: {detail}")]
    ManifestMismatch { path: String, detail: String },

    #[error("empty calibration sample")]
    EmptySample,

    #[error("percentile {0} outside (0, 100]")]
    InvalidPercentile(f64),

    #[error("thresholds missing language `{0}`")]
    ThresholdsMissingLanguage(LanguageTag),

    #[error("document language `{doc}` does not match model language `{model}`")]
    LanguageModelMismatch {
        doc: LanguageTag,
        model: LanguageTag,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("incompatible signatures: {0}")]
    IncompatibleSignatures(String),

    #[error("missing attribute `{0}`")]
    MissingAttribute(String),

    #[error("empty template set")]
    EmptyTemplateSet,

    #[error("sample of {requested} exceeds pool size {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("inventory shortfall in category `{category}`: {deficit} tokens short")]
    Shortfall { category: String, deficit: u64 },

    #[error("token position {t} outside budget 0..={budget}")]
    TokensOutOfRange { t: u64, budget: u64 },

    #[error("missing stage `{0}`")]
    MissingStage(String),

    #[error("degenerate scorer: direct answer score is zero")]
    DegenerateScorer,

    #[error("invalid rule `{name}`: {msg}")]
    InvalidRule { name: String, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("client error: {0}")]
    Client(#[from] crate::synthesis::client::ClientError),
}
