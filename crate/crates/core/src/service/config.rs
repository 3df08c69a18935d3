use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, ServiceError};
use crate::classifiers::HyperParams;
use crate::corpus::IngestConfig;
use crate::embedding::{EmbedOptions, ProviderSpec};
use crate::ensemble::{ShortlistOptions, Threshold};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSettings {
    pub parallelism: usize,
    pub batch_size: usize,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        let d = EmbedOptions::default();
        Self {
            parallelism: d.parallelism,
            batch_size: d.batch_size,
        }
    }
}

impl From<EmbedSettings> for EmbedOptions {
    fn from(s: EmbedSettings) -> Self {
        EmbedOptions {
            parallelism: s.parallelism,
            batch_size: s.batch_size,
        }
    }
}

/// Default file locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub store: Option<PathBuf>,
}

/// Pipeline settings, loaded from TOML.
///
/// ```toml
/// version = 1
/// threshold = 2
/// seed = 0
///
/// [provider]
/// kind = "hashing"
/// n_features = 1024
///
/// [hyper.knn]
/// k = 5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub provider: ProviderSpec,
    #[serde(default)]
    pub threshold: Threshold,
    /// Model seed, shared by every learner.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub embed: EmbedSettings,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub shortlist: ShortlistOptions,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            provider: ProviderSpec::default(),
            threshold: Threshold::default(),
            seed: 0,
            hyper: HyperParams::default(),
            embed: EmbedSettings::default(),
            ingest: IngestConfig::default(),
            shortlist: ShortlistOptions::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            ServiceError::Config(msg) => ServiceError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(ServiceError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.provider.dim() < 2 {
            return Err(ServiceError::Config("provider dimension must be at least 2".into()));
        }
        if self.embed.parallelism == 0 || self.embed.batch_size == 0 {
            return Err(ServiceError::Config("embed.parallelism and embed.batch_size must be positive".into()));
        }
        self.hyper.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(())
    }
}
