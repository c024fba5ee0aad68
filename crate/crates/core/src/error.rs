use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("record {patient_id}: {message}")]
    Horizon { patient_id: String, message: String },

    #[error("record {patient_id}: data integrity violation: {message}")]
    DataIntegrity { patient_id: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("task `{task}` has a single class in the training labels")]
    DegenerateTask { task: String },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("unknown patient id `{0}`")]
    UnknownPatient(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
