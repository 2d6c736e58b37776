use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {message}")]
    MalformedJson { path: PathBuf, message: String },

    /// A structurally valid JSON document that does not match the expected
    /// schema. `location` is the JSON path of the offending node.
    #[error("{path}: schema violation at `{location}`: {message}")]
    Schema {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },

    #[error("duplicate question id `{0}`")]
    DuplicateId(String),

    #[error("question `{0}` has no gold answers")]
    NoGoldAnswers(String),

    #[error("fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("length buckets must be a non-empty, strictly increasing list")]
    InvalidBuckets,

    #[error("at least one gold answer is required")]
    EmptyGolds,

    #[error("no models given")]
    NoModels,

    #[error("report for model `{model}` covers a different question set than `{reference}`")]
    IdSetMismatch { model: String, reference: String },

    #[error("no candidates to vote on")]
    EmptyCandidates,

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("predictions and weight table disagree on the model set: {0}")]
    ModelSetMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid probability {value} for class `{class}`")]
    InvalidProbability { class: String, value: f64 },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Maps a path-tracking serde error onto `MalformedJson` (syntax) or
    /// `Schema` (data) depending on its category.
    pub(crate) fn from_json(
        path: impl Into<PathBuf>,
        err: serde_path_to_error::Error<serde_json::Error>,
    ) -> Self {
        let path = path.into();
        let location = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => Error::Schema {
                path,
                location,
                message: inner.to_string(),
            },
            _ => Error::MalformedJson {
                path,
                message: inner.to_string(),
            },
        }
    }

    pub fn is_schema_violation(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::DuplicateId(_)
                | Error::NoGoldAnswers(_)
                | Error::MalformedJson { .. }
                | Error::EmptyFile { .. }
                | Error::InvalidRule(_)
        )
    }

    pub fn is_missing_input(&self) -> bool {
        matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

/// Reads a whole file and decodes it with path tracking.
pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::from_json(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
