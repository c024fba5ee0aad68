use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Stage;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the configuration sections the stage depends on.
    pub input_hash: String,
    pub seconds: f64,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Hash of the configuration of the latest command.
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            stages: BTreeMap::new(),
        }
    }

    /// The manifest in `dir`, or an empty one when there is none yet.
    pub fn load_or_new(dir: &Path, config_hash: &str) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let mut m: RunManifest = serde_json::from_str(&text)
                    .map_err(|e| icu_policy::Error::Format(format!("{}: {e}", path.display())))?;
                m.config_hash = config_hash.to_string();
                Ok(m)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RunManifest::new(config_hash.to_string())),
            Err(e) => Err(icu_policy::Error::Io { path, source: e }.into()),
        }
    }

    /// Fails unless `stage` completed under a configuration hashing to `hash`.
    pub fn require(&self, stage: Stage, hash: &str) -> Result<&StageRecord, CliError> {
        match self.stages.get(stage.name()) {
            None => Err(CliError::MissingArtifact {
                what: format!("{} outputs", stage.name()),
                command: stage.name(),
            }),
            Some(r) if r.input_hash != hash => Err(CliError::StaleArtifact {
                what: format!("the {} output", stage.name()),
                command: stage.name(),
            }),
            Some(r) => Ok(r),
        }
    }

    pub fn record(&mut self, stage: Stage, record: StageRecord) {
        self.stages.insert(stage.name().to_string(), record);
    }

    /// Every file listed by any stage, sorted.
    pub fn files(&self) -> Vec<String> {
        let mut all: Vec<String> = self.stages.values().flat_map(|r| r.files.iter().cloned()).collect();
        all.sort();
        all.dedup();
        all
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| icu_policy::Error::Io { path: tmp.clone(), source: e })?;
    std::fs::rename(&tmp, path).map_err(|e| icu_policy::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}
