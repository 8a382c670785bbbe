//! Scene dataset serialization.
//!
//! A dataset is one JSONL file: a header line with format, version, camera
//! and feature-encoder identity, then one scene per line. 3D ground truth
//! is optional per person so the same container carries fully labeled
//! training data, detection-only adaptation data, and pseudo-labeled output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body_model::{CameraIntrinsics, BETA_DIM};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "hypercrowd-scenes";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PersonGt {
    /// Per-joint 6D rotations, root expressed in the camera frame.
    pub theta6: Vec<f64>,
    pub beta: [f64; BETA_DIM],
    /// Camera-frame root position.
    pub trans: [f64; 3],
    /// Absolute camera-frame joint positions.
    pub joints3d: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Person {
    /// Projected joints, present for occluded joints too.
    pub joints2d: Vec<[f64; 2]>,
    pub vis: Vec<bool>,
    /// Detection box `[x_min, y_min, x_max, y_max]` in pixels.
    pub box2d: [f64; 4],
    /// Pose/appearance code from the feature encoder.
    pub q: Vec<f64>,
    /// Generator group label.
    pub group: usize,
    pub gt: Option<PersonGt>,
}

impl Person {
    pub fn visible_fraction(&self) -> f64 {
        if self.vis.is_empty() {
            return 0.0;
        }
        self.vis.iter().filter(|v| **v).count() as f64 / self.vis.len() as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub persons: Vec<Person>,
    /// Set on scenes whose ground truth was filled in by a model rather
    /// than the generator.
    #[serde(default)]
    pub pseudo_gt: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub cam: CameraIntrinsics,
    /// Dimension of the per-person code `q`.
    pub feature_dim: usize,
    /// Seed of the fixed random projection that produced `q`. Datasets used
    /// together must agree on it, otherwise codes are incomparable.
    pub encoder_seed: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn new(
        cam: CameraIntrinsics,
        feature_dim: usize,
        encoder_seed: u64,
        scenes: Vec<Scene>,
    ) -> Self {
        Dataset {
            header: DatasetHeader {
                format: DATASET_FORMAT.to_string(),
                version: DATASET_VERSION,
                cam,
                feature_dim,
                encoder_seed,
                count: scenes.len(),
            },
            scenes,
        }
    }

    /// Drop all 3D ground truth, keeping detections and codes.
    pub fn strip_gt(&mut self) {
        for scene in &mut self.scenes {
            for person in &mut scene.persons {
                person.gt = None;
            }
        }
    }

    /// Two datasets are compatible when a model trained on one can consume
    /// the other: same camera and same feature encoder.
    pub fn check_compatible(&self, other: &DatasetHeader) -> Result<()> {
        let a = &self.header;
        let same_cam = (a.cam.focal, a.cam.cx, a.cam.cy, a.cam.width, a.cam.height)
            == (
                other.cam.focal,
                other.cam.cx,
                other.cam.cy,
                other.cam.width,
                other.cam.height,
            );
        if !same_cam || a.feature_dim != other.feature_dim || a.encoder_seed != other.encoder_seed
        {
            return Err(Error::Data(
                "datasets disagree on camera or feature encoder".to_string(),
            ));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for scene in &self.scenes {
            out.push_str(&serde_json::to_string(scene)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data("empty dataset file".to_string()))?;
        let header: DatasetHeader = serde_json::from_str(header_line)?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Data(format!(
                "not a scene dataset: format tag {:?}",
                header.format
            )));
        }
        if header.version != DATASET_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset version {}",
                header.version
            )));
        }
        let scenes: Vec<Scene> = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        if scenes.len() != header.count {
            return Err(Error::Data(format!(
                "dataset declares {} scenes but contains {}",
                header.count,
                scenes.len()
            )));
        }
        Ok(Dataset { header, scenes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}
