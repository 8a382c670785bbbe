//! Articulated body representation: a simplified skeleton, 6D joint
//! rotations, forward kinematics, and the camera model used to place bodies
//! in the image.

pub mod camera;
pub mod kinematics;
pub mod rot6d;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use camera::{
    decode_translation, decode_translation_var, encode_box, project_point, project_point_var,
    BoxInfo, CameraIntrinsics,
};
pub use kinematics::{bone_scales_from_beta, forward_kinematics, forward_kinematics_var};
pub use rot6d::{rot6d_to_rotmat, rot6d_to_rotmat_var, rotmat_to_rot6d};

/// Number of shape coefficients: one global log-scale plus per-group ones.
pub const BETA_DIM: usize = 10;

const SKELETON_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Index of the parent joint; -1 for the root. Parents precede children.
    pub parent: i32,
    /// Rest-pose offset from the parent, meters.
    pub offset: [f64; 3],
    /// Which beta component scales the bone ending at this joint (1-based;
    /// beta[0] is the global scale applied to every bone). 0 for the root.
    pub scale_group: usize,
}

/// Skeleton definition. Coordinates follow the camera convention: x right,
/// y down, z forward, so "up" along a standing body is -y.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Skeleton {
    pub version: u32,
    pub joints: Vec<Joint>,
    pub root: usize,
    pub head_top: usize,
    pub left_ankle: usize,
    pub right_ankle: usize,
}

impl Skeleton {
    /// The built-in 14-joint body. Legs hang directly from the pelvis; there
    /// are no separate hip joints.
    pub fn default_body() -> Self {
        let j = |name: &str, parent: i32, offset: [f64; 3], scale_group: usize| Joint {
            name: name.to_string(),
            parent,
            offset,
            scale_group,
        };
        let skel = Skeleton {
            version: SKELETON_VERSION,
            joints: vec![
                j("pelvis", -1, [0.0, 0.0, 0.0], 0),
                j("chest", 0, [0.0, -0.24, 0.0], 1),
                j("neck", 1, [0.0, -0.25, 0.0], 1),
                j("head_top", 2, [0.0, -0.26, 0.0], 2),
                j("left_shoulder", 2, [-0.19, 0.03, 0.0], 3),
                j("right_shoulder", 2, [0.19, 0.03, 0.0], 3),
                j("left_elbow", 4, [-0.03, 0.28, 0.0], 4),
                j("right_elbow", 5, [0.03, 0.28, 0.0], 4),
                j("left_wrist", 6, [-0.01, 0.26, 0.0], 5),
                j("right_wrist", 7, [0.01, 0.26, 0.0], 5),
                j("left_knee", 0, [-0.10, 0.46, 0.0], 6),
                j("right_knee", 0, [0.10, 0.46, 0.0], 6),
                j("left_ankle", 10, [0.0, 0.46, 0.0], 7),
                j("right_ankle", 11, [0.0, 0.46, 0.0], 7),
            ],
            root: 0,
            head_top: 3,
            left_ankle: 12,
            right_ankle: 13,
        };
        skel.validate().expect("built-in skeleton is valid");
        skel
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SKELETON_VERSION {
            return Err(Error::Data(format!(
                "unsupported skeleton version {}",
                self.version
            )));
        }
        if self.joints.is_empty() {
            return Err(Error::Data("skeleton has no joints".to_string()));
        }
        let mut roots = 0;
        for (i, joint) in self.joints.iter().enumerate() {
            if joint.parent < 0 {
                roots += 1;
                if i != self.root {
                    return Err(Error::Data(format!(
                        "root joint must be index {}, found parentless joint at {i}",
                        self.root
                    )));
                }
            } else {
                if joint.parent as usize >= i {
                    return Err(Error::Data(format!(
                        "joint {i} has parent {} but parents must precede children",
                        joint.parent
                    )));
                }
                let norm_sq = joint.offset.iter().map(|x| x * x).sum::<f64>();
                if norm_sq == 0.0 {
                    return Err(Error::Data(format!("joint {i} has a zero bone offset")));
                }
                if joint.scale_group == 0 || joint.scale_group >= BETA_DIM {
                    return Err(Error::Data(format!(
                        "joint {i} scale group {} out of range 1..{}",
                        joint.scale_group, BETA_DIM
                    )));
                }
            }
        }
        if roots != 1 {
            return Err(Error::Data(format!("skeleton has {roots} roots, expected 1")));
        }
        for (label, idx) in [
            ("root", self.root),
            ("head_top", self.head_top),
            ("left_ankle", self.left_ankle),
            ("right_ankle", self.right_ankle),
        ] {
            if idx >= self.joints.len() {
                return Err(Error::Data(format!("named index {label} out of range")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let skel: Skeleton = serde_json::from_str(&fs::read_to_string(path)?)?;
        skel.validate()?;
        Ok(skel)
    }
}

/// Per-person body state: 6D rotation per joint, shape coefficients and
/// camera-frame translation of the root.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BodyParams {
    /// Flattened J x 6 rotation parameters.
    pub theta: Vec<f64>,
    pub beta: [f64; BETA_DIM],
    pub trans: [f64; 3],
}

impl BodyParams {
    pub fn rest(num_joints: usize) -> Self {
        let mut theta = Vec::with_capacity(num_joints * 6);
        for _ in 0..num_joints {
            theta.extend_from_slice(&rot6d::IDENTITY_6D);
        }
        BodyParams {
            theta,
            beta: [0.0; BETA_DIM],
            trans: [0.0, 0.0, 0.0],
        }
    }

    pub fn num_joints(&self) -> usize {
        self.theta.len() / 6
    }

    pub fn joint_rot6d(&self, j: usize) -> [f64; 6] {
        let s = &self.theta[j * 6..(j + 1) * 6];
        [s[0], s[1], s[2], s[3], s[4], s[5]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_is_valid_and_has_14_joints() {
        let skel = Skeleton::default_body();
        assert_eq!(skel.num_joints(), 14);
        assert!(skel.validate().is_ok());
        assert_eq!(skel.joints[skel.head_top].name, "head_top");
        assert_eq!(skel.joints[skel.left_ankle].name, "left_ankle");
    }

    #[test]
    fn parents_precede_children_is_enforced() {
        let mut skel = Skeleton::default_body();
        skel.joints[1].parent = 5;
        assert!(skel.validate().is_err());
    }

    #[test]
    fn zero_bone_offset_is_rejected() {
        let mut skel = Skeleton::default_body();
        skel.joints[3].offset = [0.0, 0.0, 0.0];
        assert!(skel.validate().is_err());
    }

    #[test]
    fn skeleton_json_roundtrip() {
        let skel = Skeleton::default_body();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skel.json");
        skel.save(&path).unwrap();
        let loaded = Skeleton::load(&path).unwrap();
        assert_eq!(loaded.num_joints(), skel.num_joints());
        assert_eq!(loaded.joints[4].offset, skel.joints[4].offset);
    }

    #[test]
    fn rest_params_decode_to_identity() {
        let p = BodyParams::rest(14);
        assert_eq!(p.num_joints(), 14);
        assert_eq!(p.joint_rot6d(0), rot6d::IDENTITY_6D);
    }
}
