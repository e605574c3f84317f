//! Service configuration: TOML file, then environment overrides.
//!
//! ```toml
//! data_dir = "./data"
//!
//! [features]
//! weights_path = "assets/vgg19.safetensors"
//!
//! [superres]
//! weights_path = "assets/srcnn_x4.safetensors"
//!
//! [server]
//! port = 8080
//!
//! [queue]
//! workers = 2
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::queue::default_workers;

pub const DEFAULT_PORT: u16 = 8080;
/// Seed of the stand-in feature network used when no weights are configured.
pub const DEFAULT_NET_SEED: u64 = 0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub weights_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperresSection {
    pub weights_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub port: u16,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self { port: DEFAULT_PORT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueSection {
    pub workers: usize,
}

impl Default for QueueSection {
    fn default() -> Self {
        Self { workers: default_workers() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Holds the artifact store and the feedback database.
    pub data_dir: PathBuf,
    pub features: FeaturesSection,
    pub superres: SuperresSection,
    pub server: ServerSection,
    pub queue: QueueSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            features: FeaturesSection::default(),
            superres: SuperresSection::default(),
            server: ServerSection::default(),
            queue: QueueSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_path_buf(), source })
    }

    /// Reads `path` if given (defaults otherwise) and applies overrides from
    /// the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Overrides from `FASTFASHION_*` variables, looked up through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::Env { name: name.into(), message: e.to_string() })
        }

        if let Some(v) = get("FASTFASHION_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("FASTFASHION_FEATURES_WEIGHTS_PATH") {
            self.features.weights_path = Some(v.into());
        }
        if let Some(v) = get("FASTFASHION_SUPERRES_WEIGHTS_PATH") {
            self.superres.weights_path = Some(v.into());
        }
        if let Some(v) = get("FASTFASHION_SERVER_PORT") {
            self.server.port = parse("FASTFASHION_SERVER_PORT", &v)?;
        }
        if let Some(v) = get("FASTFASHION_QUEUE_WORKERS") {
            let workers: usize = parse("FASTFASHION_QUEUE_WORKERS", &v)?;
            if workers == 0 {
                return Err(ConfigError::Env {
                    name: "FASTFASHION_QUEUE_WORKERS".into(),
                    message: "must be at least 1".into(),
                });
            }
            self.queue.workers = workers;
        }
        Ok(())
    }
}
