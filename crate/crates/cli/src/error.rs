use icu_policy::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing {what}: run {command} first")]
    MissingArtifact { what: String, command: &'static str },

    #[error("{what} was produced under a different configuration: run {command} again")]
    StaleArtifact { what: String, command: &'static str },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for configuration errors, 3 for missing or mismatched artifacts,
    /// 4 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } | CliError::StaleArtifact { .. } => 3,
            CliError::Core(e) => match e {
                CoreError::Config { .. } | CoreError::UnknownPatient(_) => 2,
                CoreError::VocabularyMismatch(_) | CoreError::Format(_) => 3,
                CoreError::Numeric(_) => 4,
                _ => 1,
            },
        }
    }
}
