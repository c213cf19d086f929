//! Harness configuration file (`harness.json`). Flags override file values;
//! environment variables are used only for secrets (the API key named by
//! `transport.auth_source`).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use vc_harness_core::model::ModelTarget;
use vc_harness_core::transport::TransportConfig;

fn default_prompt_dir() -> PathBuf {
    PathBuf::from("prompts")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub models: Vec<ModelTarget>,
    #[serde(default = "default_prompt_dir")]
    pub prompt_dir: PathBuf,
    #[serde(default)]
    pub marker_config: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed for mock backends; ignored by live and replay transports.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            transport: TransportConfig::default(),
            models: Vec::new(),
            prompt_dir: default_prompt_dir(),
            marker_config: None,
            output_dir: default_output_dir(),
            seed: None,
        }
    }
}

impl HarnessConfig {
    /// Load the config. An explicitly named file must exist; the default
    /// `harness.json` is optional and falls back to built-in defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(path) => {
                if !path.exists() {
                    bail!("config file {} does not exist", path.display());
                }
                path.to_path_buf()
            }
            None => {
                let default = PathBuf::from("harness.json");
                if !default.exists() {
                    return Ok(HarnessConfig::default());
                }
                default
            }
        };
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: HarnessConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.transport.validate()?;
        for model in &config.models {
            model
                .validate()
                .with_context(|| format!("model {:?} in {}", model.name, path.display()))?;
        }
        if let Some(markers) = &config.marker_config {
            if !markers.exists() {
                bail!(
                    "marker_config {} (from {}) does not exist",
                    markers.display(),
                    path.display()
                );
            }
        }
        Ok(config)
    }

    /// Resolve the model for a run command: flag value first (matched
    /// against configured models by name, else a fresh default target),
    /// then the first configured model, then the replay corpus model.
    pub fn resolve_model(
        &self,
        flag: Option<&str>,
        replay_fallback: Option<&ModelTarget>,
    ) -> Result<ModelTarget> {
        if let Some(name) = flag {
            if let Some(found) = self.models.iter().find(|m| m.name == name) {
                return Ok(found.clone());
            }
            let target = ModelTarget::new(name);
            target.validate()?;
            return Ok(target);
        }
        if let Some(first) = self.models.first() {
            return Ok(first.clone());
        }
        if let Some(fallback) = replay_fallback {
            return Ok(fallback.clone());
        }
        bail!("no model configured: pass --model or add one to the config file");
    }
}
