//! The JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::inputs::InputPaths;
use crate::evaluation::SbcSettings;
use crate::gibbs::geweke::GewekeSettings;
use crate::model::ModelConfig;
use crate::pseudoproxy::{ForcingSource, PseudoproxyDesign};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    /// Ridge penalty; zero gives OLS.
    #[serde(default)]
    pub ridge_penalty: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings { ridge_penalty: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Central credible level for intervals and coverage.
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.9
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings { level: default_level() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSettings {
    #[serde(default)]
    pub geweke: Option<GewekeSettings>,
    #[serde(default)]
    pub sbc: Option<SbcSettings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub inputs: Option<InputPaths>,
    #[serde(default)]
    pub pseudoproxy: Option<PseudoproxyDesign>,
    #[serde(default)]
    pub baseline: BaselineSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub validation: ValidationSettings,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidArgument("config lacks schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::Version { found: found as u32, expected: SCHEMA_VERSION });
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Read a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inputs = cfg.inputs.map(|i| i.resolve(base));
        if let Some(ForcingSource::File { path }) = cfg.pseudoproxy.as_mut().map(|d| &mut d.forcings) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
