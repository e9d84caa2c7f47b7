//! Application configuration, read from TOML or JSON.
//!
//! ```toml
//! box_margin = 2
//!
//! [engine]
//! backend = "fallback-geometric"
//! device = "cpu"
//! seed = 0
//!
//! [discovery]
//! min_dicom_files = 2
//! exclude_dirs = ["derived"]
//!
//! [n4]
//! shrink_factor = 4
//! fitting_levels = 4
//! iterations = 50
//! convergence_threshold = 0.001
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use cohortseg_core::engine::DEFAULT_BOX_MARGIN;
use cohortseg_core::preprocess::{N4Params, PreprocessError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::DEFAULT_IMAGE_SIZE;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Backend selection and model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// `fallback-geometric` or `medsam2`.
    pub backend: String,
    pub device: String,
    pub checkpoint_path: Option<PathBuf>,
    pub seed: u64,
    /// Square model input resolution for model backends.
    pub image_size: u32,
    /// Worker command for the subprocess model bridge.
    pub worker: Option<Vec<String>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            backend: cohortseg_core::engine::fallback::FALLBACK_ID.to_string(),
            device: "cpu".to_string(),
            checkpoint_path: None,
            seed: 0,
            image_size: DEFAULT_IMAGE_SIZE,
            worker: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// A directory becomes a case when one series has at least this many files.
    pub min_dicom_files: usize,
    /// Directory names never searched for DICOM series.
    pub exclude_dirs: Vec<String>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            min_dicom_files: 2,
            exclude_dirs: vec!["derived".to_string()],
        }
    }
}

/// N4 settings; `None` fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct N4Config {
    pub shrink_factor: Option<usize>,
    pub fitting_levels: Option<usize>,
    pub iterations: Option<usize>,
    pub convergence_threshold: Option<f64>,
}

impl N4Config {
    /// Fails when a field is out of range.
    pub fn params(&self) -> Result<N4Params, PreprocessError> {
        let d = N4Params::default();
        let levels = self.fitting_levels.unwrap_or(d.fitting_levels());
        let iters = self
            .iterations
            .unwrap_or_else(|| d.iterations_per_level.first().copied().unwrap_or(50));
        N4Params::new(
            self.shrink_factor.unwrap_or(d.shrink_factor),
            levels,
            iters,
            self.convergence_threshold.unwrap_or(d.convergence_threshold),
        )
    }

    /// Later values win field by field.
    pub fn merged(&self, over: &N4Config) -> N4Config {
        N4Config {
            shrink_factor: over.shrink_factor.or(self.shrink_factor),
            fitting_levels: over.fitting_levels.or(self.fitting_levels),
            iterations: over.iterations.or(self.iterations),
            convergence_threshold: over.convergence_threshold.or(self.convergence_threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub engine: EngineConfig,
    pub discovery: DiscoveryConfig,
    pub n4: N4Config,
    /// Pixels added around each box before clamping backend output.
    pub box_margin: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            discovery: DiscoveryConfig::default(),
            n4: N4Config::default(),
            box_margin: DEFAULT_BOX_MARGIN,
        }
    }
}

impl AppConfig {
    /// Parses by extension: `.json` as JSON, everything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}
