//! Pipeline configuration: one JSON document, optional `key=value`
//! overrides, strict key checking and range validation up front.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::glcm::TextureSettings;
use crate::gtm::GtmSettings;
use crate::rbf::RbfSettings;
use crate::render::PALETTE;
use crate::synth::SyntheticLayout;
use crate::volume::Orientation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySettings {
    pub facies: u32,
    pub seed: u64,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self { facies: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub orientation: Orientation,
    /// Header coordinate of the slice; `None` takes the middle of the axis.
    pub index: Option<i64>,
    pub palette: [[u8; 3]; 8],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            orientation: Orientation::Time,
            index: None,
            palette: PALETTE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    /// Explicit region layout; when absent, four lateral quadrants of `dims`.
    pub layout: Option<SyntheticLayout>,
    pub dims: [usize; 3],
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            layout: None,
            dims: [64, 64, 32],
            seed: 1,
        }
    }
}

impl SynthSettings {
    pub fn resolved_layout(&self) -> SyntheticLayout {
        self.layout
            .clone()
            .unwrap_or_else(|| SyntheticLayout::quadrants(self.dims[0], self.dims[1], self.dims[2]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Volume stem (`<stem>.json` + `<stem>.f32`).
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Facies CSV to score the classification against.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub glcm: TextureSettings,
    #[serde(default)]
    pub rbf: RbfSettings,
    #[serde(default)]
    pub gtm: GtmSettings,
    #[serde(default)]
    pub classify: ClassifySettings,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub synth: SynthSettings,
}

/// Sets `a.b.c = value` inside a JSON object, creating intermediate objects.
/// The value is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "override `{key}`: `{part}` is not inside an object"
                )))
            }
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

impl PipelineConfig {
    /// Reads, overrides, deserializes and validates a config. Relative paths
    /// are taken relative to the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.into(),
            source,
        })?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut config: PipelineConfig =
            serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output_dir);
        if let Some(p) = self.ground_truth.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &str, e: &dyn std::fmt::Display| {
            ConfigError::Invalid(format!("{section}: {e}"))
        };
        self.glcm.validate().map_err(|e| invalid("glcm", &e))?;
        self.rbf.validate().map_err(|e| invalid("rbf", &e))?;
        self.gtm.validate().map_err(|e| invalid("gtm", &e))?;
        if self.classify.facies == 0 {
            return Err(ConfigError::Invalid(
                "classify: facies must be at least 1".into(),
            ));
        }
        if let Some(layout) = &self.synth.layout {
            layout.header.validate().map_err(|e| invalid("synth", &e))?;
        } else if self.synth.dims.contains(&0) || self.synth.dims[..2].iter().any(|&n| n < 2) {
            return Err(ConfigError::Invalid(format!(
                "synth: dims {:?} need at least 2 inlines and crosslines and 1 sample",
                self.synth.dims
            )));
        }
        Ok(())
    }
}
