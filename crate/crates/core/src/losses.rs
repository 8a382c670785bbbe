//! Training objectives over regressed persons.
//!
//! Four terms are combined into the total objective:
//! reprojection of visible joints against 2D detections, squared error on
//! pose/shape parameters, squared error on root-relative joint positions,
//! and a crowd term that penalizes the spread of body heights along the
//! mean up direction so recovered people stand on a common ground plane.
//! The parameter and joint terms are optional so the same total works for
//! label-free adaptation, where only detections are available.

use serde::{Deserialize, Serialize};

use crate::body_model::{camera, CameraIntrinsics, Skeleton, BETA_DIM};
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, V};
use crate::reasoning::PersonVars;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub reproj: f64,
    pub param: f64,
    pub joint: f64,
    pub crowd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reproj: 5.0,
            param: 5.0,
            joint: 5.0,
            crowd: 0.1,
        }
    }
}

/// Unweighted per-term values for logging; terms that were not computed
/// report as zero.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub reproj: f64,
    pub param: f64,
    pub joint: f64,
    pub crowd: f64,
}

/// Per-person `(theta_6d, beta)` targets.
pub type ParamTargets<'a> = (&'a [Vec<f64>], &'a [[f64; BETA_DIM]]);

/// Ground-truth views for one scene. 2D detections with visibility are
/// always required; 3D supervision is optional.
pub struct LossInputs<'a> {
    pub joints2d: &'a [Vec<[f64; 2]>],
    pub vis: &'a [Vec<bool>],
    pub cam: &'a CameraIntrinsics,
    pub gt_params: Option<ParamTargets<'a>>,
    /// Per-person root-relative joint targets.
    pub gt_joints_rel: Option<&'a [Vec<[f64; 3]>]>,
    pub use_crowd: bool,
}

/// Mean over persons with at least one visible joint of the summed squared
/// pixel error of visible joints. Fully occluded persons do not dilute the
/// mean; a scene with no visible joint at all is an error.
pub fn reproj_loss(
    tape: &mut Tape,
    persons: &[PersonVars],
    joints2d: &[Vec<[f64; 2]>],
    vis: &[Vec<bool>],
    cam: &CameraIntrinsics,
) -> Result<V> {
    if persons.len() != joints2d.len() || persons.len() != vis.len() {
        return Err(Error::Data(
            "reprojection targets do not match person count".to_string(),
        ));
    }
    let mut person_terms = Vec::new();
    for (p, person) in persons.iter().enumerate() {
        if vis[p].len() != person.joints_rel.len() || joints2d[p].len() != person.joints_rel.len()
        {
            return Err(Error::Data(
                "per-joint targets do not match joint count".to_string(),
            ));
        }
        let mut joint_terms = Vec::new();
        for (j, &visible) in vis[p].iter().enumerate() {
            if !visible {
                continue;
            }
            let abs = tape.add(person.joints_rel[j], person.trans);
            let px = camera::project_point_var(tape, abs, cam)?;
            let target = tape.constant_vector(joints2d[p][j].to_vec());
            let diff = tape.sub(px, target);
            joint_terms.push(tape.sq_norm(diff));
        }
        if !joint_terms.is_empty() {
            person_terms.push(tape.add_n(&joint_terms));
        }
    }
    if person_terms.is_empty() {
        return Err(Error::Data(
            "no visible joints in scene, reprojection loss undefined".to_string(),
        ));
    }
    let total = tape.add_n(&person_terms);
    Ok(tape.mul_const(total, 1.0 / person_terms.len() as f64))
}

/// Mean over persons of the squared distance between regressed and target
/// `[theta_6d, beta]`.
pub fn param_loss(
    tape: &mut Tape,
    persons: &[PersonVars],
    gt_theta6: &[Vec<f64>],
    gt_beta: &[[f64; BETA_DIM]],
) -> Result<V> {
    if persons.len() != gt_theta6.len() || persons.len() != gt_beta.len() {
        return Err(Error::Data(
            "parameter targets do not match person count".to_string(),
        ));
    }
    if persons.is_empty() {
        return Err(Error::Data("parameter loss over zero persons".to_string()));
    }
    let mut terms = Vec::with_capacity(persons.len());
    for (p, person) in persons.iter().enumerate() {
        if tape.value(person.theta).len() != gt_theta6[p].len() {
            return Err(Error::Data(
                "rotation target length does not match regressed pose".to_string(),
            ));
        }
        let t_target = tape.constant_vector(gt_theta6[p].clone());
        let b_target = tape.constant_vector(gt_beta[p].to_vec());
        let dt = tape.sub(person.theta, t_target);
        let db = tape.sub(person.beta, b_target);
        let st = tape.sq_norm(dt);
        let sb = tape.sq_norm(db);
        terms.push(tape.add(st, sb));
    }
    let total = tape.add_n(&terms);
    Ok(tape.mul_const(total, 1.0 / terms.len() as f64))
}

/// Mean over persons of the summed squared error of root-relative joints.
pub fn joint_loss(
    tape: &mut Tape,
    persons: &[PersonVars],
    gt_rel: &[Vec<[f64; 3]>],
) -> Result<V> {
    if persons.len() != gt_rel.len() {
        return Err(Error::Data(
            "joint targets do not match person count".to_string(),
        ));
    }
    if persons.is_empty() {
        return Err(Error::Data("joint loss over zero persons".to_string()));
    }
    let mut terms = Vec::with_capacity(persons.len());
    for (p, person) in persons.iter().enumerate() {
        if gt_rel[p].len() != person.joints_rel.len() {
            return Err(Error::Data(
                "joint target count does not match skeleton".to_string(),
            ));
        }
        let mut joint_terms = Vec::with_capacity(gt_rel[p].len());
        for (j, target) in gt_rel[p].iter().enumerate() {
            let t = tape.constant_vector(target.to_vec());
            let diff = tape.sub(person.joints_rel[j], t);
            joint_terms.push(tape.sq_norm(diff));
        }
        terms.push(tape.add_n(&joint_terms));
    }
    let total = tape.add_n(&terms);
    Ok(tape.mul_const(total, 1.0 / terms.len() as f64))
}

/// Population standard deviation of body heights measured along the mean
/// body axis. Each person's axis runs from the ankle midpoint to the top of
/// the head in absolute coordinates; heights are the projections of the
/// absolute roots onto the averaged unit axis. Coplanar upright crowds
/// score zero. A person whose axis is shorter than `1e-9` is an error.
pub fn crowd_loss(tape: &mut Tape, persons: &[PersonVars], skel: &Skeleton) -> Result<V> {
    if persons.is_empty() {
        return Err(Error::Data("crowd loss over zero persons".to_string()));
    }
    let n = persons.len();
    let mut units = Vec::with_capacity(n);
    for person in persons {
        let top = tape.add(person.joints_rel[skel.head_top], person.trans);
        let la = tape.add(person.joints_rel[skel.left_ankle], person.trans);
        let ra = tape.add(person.joints_rel[skel.right_ankle], person.trans);
        let ankle_sum = tape.add(la, ra);
        let mid = tape.mul_const(ankle_sum, 0.5);
        let axis = tape.sub(top, mid);
        let len = tape.norm(axis);
        if tape.item(len) < 1e-9 {
            return Err(Error::Degenerate(
                "body axis degenerate, head and ankles coincide".to_string(),
            ));
        }
        let inv = tape.recip(len);
        units.push(tape.scalar_mul(inv, axis));
    }
    let unit_sum = tape.add_n(&units);
    let mean_axis = tape.mul_const(unit_sum, 1.0 / n as f64);

    let mut heights = Vec::with_capacity(n);
    for person in persons {
        let root = tape.add(person.joints_rel[skel.root], person.trans);
        heights.push(tape.dot(root, mean_axis));
    }
    let h_sum = tape.add_n(&heights);
    let h_mean = tape.mul_const(h_sum, 1.0 / n as f64);
    let mut sq_devs = Vec::with_capacity(n);
    for &h in &heights {
        let d = tape.sub(h, h_mean);
        sq_devs.push(tape.mul(d, d));
    }
    let dev_sum = tape.add_n(&sq_devs);
    let variance = tape.mul_const(dev_sum, 1.0 / n as f64);
    Ok(tape.sqrt(variance))
}

/// Weighted total with an unweighted per-term report. Terms without targets
/// are skipped and report zero.
pub fn total_loss(
    tape: &mut Tape,
    persons: &[PersonVars],
    inputs: &LossInputs,
    weights: &LossWeights,
    skel: &Skeleton,
) -> Result<(V, LossReport)> {
    let mut report = LossReport::default();
    let mut terms = Vec::new();

    let r = reproj_loss(tape, persons, inputs.joints2d, inputs.vis, inputs.cam)?;
    report.reproj = tape.item(r);
    terms.push(tape.mul_const(r, weights.reproj));

    if let Some((theta6, beta)) = inputs.gt_params {
        let p = param_loss(tape, persons, theta6, beta)?;
        report.param = tape.item(p);
        terms.push(tape.mul_const(p, weights.param));
    }
    if let Some(rel) = inputs.gt_joints_rel {
        let j = joint_loss(tape, persons, rel)?;
        report.joint = tape.item(j);
        terms.push(tape.mul_const(j, weights.joint));
    }
    if inputs.use_crowd {
        let c = crowd_loss(tape, persons, skel)?;
        report.crowd = tape.item(c);
        terms.push(tape.mul_const(c, weights.crowd));
    }

    let total = tape.add_n(&terms);
    report.total = tape.item(total);
    Ok((total, report))
}
