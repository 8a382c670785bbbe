//! Run configuration.
//!
//! One TOML file configures every subcommand; sections map onto the
//! structs below and every field has a default, so an empty file (or no
//! file) is a valid configuration. Unknown keys are rejected rather than
//! ignored. Individual values can be overridden from the command line with
//! `key.path=value` strings, applied to the parsed TOML tree before
//! deserialization so overrides and files obey identical rules.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body_model::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::reasoning::ReasoningConfig;
use crate::synth::SceneConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub focal: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            focal: 1000.0,
            width: 1920.0,
            height: 1080.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.focal, self.width, self.height)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Scenes with more persons are split into spatial chunks of at most
    /// this size before training.
    pub max_persons: usize,
    pub weights: LossWeights,
    /// Write a checkpoint every this many steps (the final step always
    /// writes one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 2,
            lr: 1e-3,
            seed: 7,
            max_persons: 20,
            weights: LossWeights::default(),
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub iters: usize,
    pub lr: f64,
    /// Keep the crowd term on during label-free adaptation.
    pub use_crowd: bool,
    /// Abort when the adaptation loss exceeds this multiple of its starting
    /// value.
    pub divergence_factor: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            iters: 100,
            lr: 1e-3,
            use_crowd: true,
            divergence_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Depth difference treated as a tie when ranking persons, meters.
    pub tie_band: f64,
    /// Root distance thresholds for detection F1, meters.
    pub f1_thresholds: Vec<f64>,
    /// A person is "occluded" when its visible joint fraction is at most
    /// this.
    pub occluded_vis_max: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tie_band: 0.01,
            f1_thresholds: vec![0.4, 0.8, 1.2],
            occluded_vis_max: 0.6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub count: usize,
    pub seed: u64,
    /// Seed of the feature encoder; keep identical across datasets that
    /// will be used together.
    pub encoder_seed: u64,
    /// Emit detections only, no 3D ground truth.
    pub strip_gt: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            count: 100,
            seed: 11,
            encoder_seed: 42,
            strip_gt: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub model: ReasoningConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub metrics: MetricsConfig,
    #[serde(rename = "gen")]
    pub generate: GenConfig,
}

impl RunConfig {
    /// Load from an optional TOML file, then apply `key.path=value`
    /// overrides, then deserialize and validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Value = match path {
            Some(p) => fs::read_to_string(p)?
                .parse::<toml::Value>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for spec in overrides {
            apply_override(&mut root, spec)?;
        }
        let cfg: RunConfig = root
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.camera.intrinsics().validate()?;
        self.model.validate()?;
        let t = &self.train;
        if t.steps == 0 || t.batch == 0 || t.checkpoint_every == 0 {
            return Err(Error::Config(
                "steps, batch and checkpoint_every must be positive".to_string(),
            ));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", t.lr)));
        }
        if t.max_persons < 2 {
            return Err(Error::Config(
                "max_persons below 2 leaves no relations to reason over".to_string(),
            ));
        }
        let w = &t.weights;
        for (name, v) in [
            ("reproj", w.reproj),
            ("param", w.param),
            ("joint", w.joint),
            ("crowd", w.crowd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v} invalid")));
            }
        }
        let a = &self.adapt;
        if a.iters == 0 || !(a.lr.is_finite() && a.lr > 0.0) || a.divergence_factor <= 1.0 {
            return Err(Error::Config("bad adaptation settings".to_string()));
        }
        let m = &self.metrics;
        if m.tie_band <= 0.0
            || m.f1_thresholds.is_empty()
            || m.f1_thresholds.iter().any(|t| *t <= 0.0)
            || !(0.0..=1.0).contains(&m.occluded_vis_max)
        {
            return Err(Error::Config("bad metric settings".to_string()));
        }
        if self.generate.count == 0 {
            return Err(Error::Config("gen.count must be positive".to_string()));
        }
        Ok(())
    }
}

/// Apply one `key.path=value` override to a TOML tree. The value is parsed
/// as TOML (so lists, booleans and numbers work); values that do not parse
/// are taken as strings.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let value = parse_toml_value(raw.trim());

    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {key} is not a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{path}: parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        _ => toml::Value::String(raw.to_string()),
    }
}
