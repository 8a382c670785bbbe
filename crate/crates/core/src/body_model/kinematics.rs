//! Forward kinematics over the skeleton tree.
//!
//! Each bone offset is scaled by `exp(beta[0] + beta[group])` and rotated by
//! the parent's accumulated global rotation:
//! `position[child] = position[parent] + global_rot[parent] * scaled_offset`.
//! Output joints are root-relative (root at the origin).

use crate::body_model::{rot6d, BodyParams, Skeleton, BETA_DIM};
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, V};

pub type Mat3 = [[f64; 3]; 3];

pub const MAT3_IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Rodrigues rotation about a unit axis.
pub fn rotation_about_axis(axis: [f64; 3], angle: f64) -> Mat3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    assert!(n > 0.0, "rotation axis must be nonzero");
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Per-joint bone scales `exp(beta[0] + beta[group])`. The root entry is 1.
pub fn bone_scales_from_beta(beta: &[f64; BETA_DIM], skel: &Skeleton) -> Vec<f64> {
    skel.joints
        .iter()
        .map(|j| {
            if j.parent < 0 {
                1.0
            } else {
                (beta[0] + beta[j.scale_group]).exp()
            }
        })
        .collect()
}

/// Root-relative joint positions from decoded rotation matrices and
/// per-joint bone scales.
pub fn fk_from_rotmats(rots: &[Mat3], scales: &[f64], skel: &Skeleton) -> Vec<[f64; 3]> {
    assert!(rots.len() == skel.num_joints() && scales.len() == skel.num_joints());
    let n = skel.num_joints();
    let mut global = vec![MAT3_IDENTITY; n];
    let mut pos = vec![[0.0; 3]; n];
    for (i, joint) in skel.joints.iter().enumerate() {
        if joint.parent < 0 {
            global[i] = rots[i];
            pos[i] = [0.0, 0.0, 0.0];
        } else {
            let p = joint.parent as usize;
            global[i] = mat3_mul(&global[p], &rots[i]);
            let scaled = [
                scales[i] * joint.offset[0],
                scales[i] * joint.offset[1],
                scales[i] * joint.offset[2],
            ];
            let step = mat3_vec(&global[p], &scaled);
            pos[i] = [pos[p][0] + step[0], pos[p][1] + step[1], pos[p][2] + step[2]];
        }
    }
    pos
}

/// Root-relative joint positions from body parameters.
pub fn forward_kinematics(params: &BodyParams, skel: &Skeleton) -> Result<Vec<[f64; 3]>> {
    if params.num_joints() != skel.num_joints() {
        return Err(Error::Degenerate(format!(
            "theta encodes {} joints, skeleton has {}",
            params.num_joints(),
            skel.num_joints()
        )));
    }
    let mut rots = Vec::with_capacity(skel.num_joints());
    for j in 0..skel.num_joints() {
        rots.push(rot6d::rot6d_to_rotmat(&params.joint_rot6d(j))?);
    }
    let scales = bone_scales_from_beta(&params.beta, skel);
    Ok(fk_from_rotmats(&rots, &scales, skel))
}

/// Tape forward kinematics. `rotmats` are `[3,3]` nodes (one per joint, as
/// produced by [`rot6d::rot6d_to_rotmat_var`]); `beta` is a length-10 node.
/// Returns one length-3 node per joint, root-relative.
pub fn forward_kinematics_var(
    tape: &mut Tape,
    rotmats: &[V],
    beta: V,
    skel: &Skeleton,
) -> Result<Vec<V>> {
    if rotmats.len() != skel.num_joints() {
        return Err(Error::Degenerate(format!(
            "{} rotation matrices for {} joints",
            rotmats.len(),
            skel.num_joints()
        )));
    }
    assert!(tape.value(beta).len() == BETA_DIM, "beta must have {BETA_DIM} elements");

    let beta_global = tape.slice(beta, 0, 1);
    let n = skel.num_joints();
    let mut global: Vec<V> = Vec::with_capacity(n);
    let mut pos: Vec<V> = Vec::with_capacity(n);
    for (i, joint) in skel.joints.iter().enumerate() {
        if joint.parent < 0 {
            global.push(rotmats[i]);
            pos.push(tape.constant_vector(vec![0.0, 0.0, 0.0]));
        } else {
            let p = joint.parent as usize;
            global.push(tape.matmul(global[p], rotmats[i]));
            let beta_group = tape.slice(beta, joint.scale_group, 1);
            let log_scale = tape.add(beta_global, beta_group);
            let scale = tape.exp(log_scale);
            let offset = tape.constant_vector(joint.offset.to_vec());
            let scaled = tape.scalar_mul(scale, offset);
            let step = tape.matvec(global[p], scaled);
            pos.push(tape.add(pos[p], step));
        }
    }
    Ok(pos)
}
