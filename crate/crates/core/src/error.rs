use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported signal format {0} (only 212 is supported)")]
    UnsupportedFormat(u32),

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("sample {0} outside the 12-bit range [-2048, 2047]")]
    Range(i32),

    #[error("annotation codec error: {0}")]
    Codec(String),

    #[error("'{0}' is not a beat annotation symbol")]
    NotABeat(char),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("checksum mismatch on signal {signal}: header {expected}, computed {computed}")]
    Checksum {
        signal: usize,
        expected: u16,
        computed: u16,
    },

    #[error("filter design error: {0}")]
    Design(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("empty input")]
    EmptyInput,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
