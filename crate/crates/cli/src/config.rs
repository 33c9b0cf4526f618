use std::fs;
use std::path::{Path, PathBuf};

use beatgan::harness::ExperimentConfig;
use beatgan::preprocess::PreprocessConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordPaths {
    pub signal: PathBuf,
    pub annotations: PathBuf,
}

/// The single configuration file shared by every subcommand. Relative record
/// paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub records: Vec<RecordPaths>,
    pub preprocess: PreprocessConfig,
    pub snapshot_period: u64,
    pub experiment: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            records: Vec::new(),
            preprocess: PreprocessConfig::default(),
            snapshot_period: 500,
            experiment: ExperimentConfig::default(),
        }
    }
}

pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// SHA-256 of the file bytes, or of the serialized defaults.
    pub sha256: String,
    pub path: Option<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl PipelineConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.preprocess
            .validate()
            .map_err(|e| CliError::Config(format!("preprocess: {e}")))?;
        if self.snapshot_period == 0 {
            return Err(CliError::Config("snapshot_period must be positive".into()));
        }
        self.experiment.validate().map_err(CliError::from)?;
        let size = self.preprocess.image_size;
        let cnn = &self.experiment.cnn;
        if (cnn.height, cnn.width) != (size, size) {
            return Err(CliError::Config(format!(
                "classifier input {}x{} does not match image_size {size}",
                cnn.height, cnn.width
            )));
        }
        self.experiment
            .gan
            .validate()
            .map_err(|e| CliError::Config(format!("gan: {e}")))?;
        if self.experiment.gan.image_size != size {
            return Err(CliError::Config(format!(
                "GAN image_size {} does not match image_size {size}",
                self.experiment.gan.image_size
            )));
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
        let Some(path) = path else {
            let config = PipelineConfig::default();
            let text = serde_json::to_string(&config).expect("defaults serialize");
            return Ok(LoadedConfig {
                sha256: sha256_hex(text.as_bytes()),
                config,
                path: None,
            });
        };
        let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut config.records {
            r.signal = base.join(&r.signal);
            r.annotations = base.join(&r.annotations);
        }
        config.validate()?;
        Ok(LoadedConfig {
            sha256: sha256_hex(&bytes),
            config,
            path: Some(path.to_path_buf()),
        })
    }
}
