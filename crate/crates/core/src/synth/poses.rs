//! Pose primitives for scene generation.
//!
//! Each primitive maps a phase angle to per-joint axis-angle rotations in
//! the local joint frames of the default 14-joint body. Cyclic primitives
//! (walk, wave, march) animate smoothly with the phase; static ones ignore
//! it apart from a small sway so that no two phases are bit-identical.

pub const PRIMITIVE_COUNT: usize = 6;

pub const PRIMITIVE_NAMES: [&str; PRIMITIVE_COUNT] =
    ["stand", "walk", "wave", "sit", "lean", "march"];

const PELVIS: usize = 0;
const CHEST: usize = 1;
const NECK: usize = 2;
const HEAD: usize = 3;
const L_SHOULDER: usize = 4;
const R_SHOULDER: usize = 5;
const L_ELBOW: usize = 6;
const R_ELBOW: usize = 7;
const L_WRIST: usize = 8;
const R_WRIST: usize = 9;
const L_KNEE: usize = 10;
const R_KNEE: usize = 11;
const L_ANKLE: usize = 12;
const R_ANKLE: usize = 13;

pub const JOINTS: usize = 14;

/// Axis-angle rotation per joint for one primitive at the given phase.
/// `kind` indexes [`PRIMITIVE_NAMES`].
pub fn primitive_pose(kind: usize, phase: f64) -> Vec<[f64; 3]> {
    assert!(kind < PRIMITIVE_COUNT, "unknown pose primitive {kind}");
    let mut aa = vec![[0.0; 3]; JOINTS];
    let s = phase.sin();
    let c = phase.cos();
    match kind {
        // stand: relaxed, barely perceptible sway
        0 => {
            aa[CHEST] = [0.03 * s, 0.0, 0.02 * c];
            aa[NECK] = [-0.02 * s, 0.0, 0.0];
        }
        // walk: alternating knees, counter-swinging arms, slight torso twist
        1 => {
            aa[L_KNEE] = [0.25 * (1.0 + s), 0.0, 0.0];
            aa[R_KNEE] = [0.25 * (1.0 - s), 0.0, 0.0];
            aa[L_ANKLE] = [0.1 * s, 0.0, 0.0];
            aa[R_ANKLE] = [-0.1 * s, 0.0, 0.0];
            aa[L_SHOULDER] = [-0.35 * s, 0.0, 0.0];
            aa[R_SHOULDER] = [0.35 * s, 0.0, 0.0];
            aa[L_ELBOW] = [-0.25, 0.0, 0.0];
            aa[R_ELBOW] = [-0.25, 0.0, 0.0];
            aa[CHEST] = [0.05, 0.12 * s, 0.0];
            aa[PELVIS] = [0.05, 0.0, 0.0];
        }
        // wave: right arm lifted, forearm oscillating twice per cycle
        2 => {
            aa[R_SHOULDER] = [0.0, 0.0, -2.1];
            aa[R_ELBOW] = [0.0, 0.0, -0.5 + 0.4 * (2.0 * phase).sin()];
            aa[R_WRIST] = [0.0, 0.0, 0.3 * (2.0 * phase).cos()];
            aa[HEAD] = [0.0, 0.0, 0.06 * s];
            aa[CHEST] = [0.02 * s, 0.0, 0.0];
        }
        // sit: both knees folded, torso pitched, arms resting forward
        3 => {
            aa[L_KNEE] = [1.2, 0.0, 0.0];
            aa[R_KNEE] = [1.2, 0.0, 0.0];
            aa[L_ANKLE] = [-0.3, 0.0, 0.0];
            aa[R_ANKLE] = [-0.3, 0.0, 0.0];
            aa[CHEST] = [0.3, 0.0, 0.0];
            aa[PELVIS] = [-0.2, 0.0, 0.0];
            aa[L_SHOULDER] = [0.45, 0.0, 0.0];
            aa[R_SHOULDER] = [0.45, 0.0, 0.0];
            aa[NECK] = [-0.1, 0.0, 0.0];
        }
        // lean: forward bend from the chest, head lifted to compensate
        4 => {
            aa[CHEST] = [0.45, 0.0, 0.0];
            aa[NECK] = [-0.2, 0.0, 0.0];
            aa[PELVIS] = [0.1, 0.0, 0.0];
            aa[L_KNEE] = [0.1, 0.0, 0.0];
            aa[R_KNEE] = [0.1, 0.0, 0.0];
            aa[L_WRIST] = [0.15, 0.0, 0.0];
            aa[R_WRIST] = [0.15, 0.0, 0.0];
        }
        // march: exaggerated walk
        5 => {
            aa[L_KNEE] = [0.4 * (1.0 + s), 0.0, 0.0];
            aa[R_KNEE] = [0.4 * (1.0 - s), 0.0, 0.0];
            aa[L_SHOULDER] = [-0.55 * s, 0.0, 0.0];
            aa[R_SHOULDER] = [0.55 * s, 0.0, 0.0];
            aa[L_ELBOW] = [-0.4, 0.0, 0.0];
            aa[R_ELBOW] = [-0.4, 0.0, 0.0];
            aa[CHEST] = [0.06, 0.18 * s, 0.0];
            aa[HEAD] = [0.05 * c, 0.0, 0.0];
            aa[PELVIS] = [0.06, 0.0, 0.0];
        }
        _ => unreachable!(),
    }
    aa
}
