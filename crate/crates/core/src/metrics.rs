//! Evaluation metrics for recovered crowds.
//!
//! All length-valued metrics are reported in millimeters. Scene structure
//! matters only where ordering does: depth ranking and detection matching
//! compare persons within a scene and pool the counts across scenes.

use crate::error::{Error, Result};

/// Mean Euclidean joint error in millimeters, averaged over every joint of
/// every person. With `root_align` the per-person root offset between
/// prediction and ground truth is removed first, scoring pose rather than
/// absolute placement.
pub fn mpjpe_mm(
    pred: &[Vec<[f64; 3]>],
    gt: &[Vec<[f64; 3]>],
    root_align: bool,
    root: usize,
) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!(
            "joint error over {} predictions vs {} references",
            pred.len(),
            gt.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p_joints, g_joints) in pred.iter().zip(gt) {
        if p_joints.len() != g_joints.len() {
            return Err(Error::Data(
                "prediction and reference joint counts differ".to_string(),
            ));
        }
        if root_align && root >= p_joints.len() {
            return Err(Error::Data(format!("root index {root} out of range")));
        }
        let offset = if root_align {
            [
                p_joints[root][0] - g_joints[root][0],
                p_joints[root][1] - g_joints[root][1],
                p_joints[root][2] - g_joints[root][2],
            ]
        } else {
            [0.0; 3]
        };
        for (p, g) in p_joints.iter().zip(g_joints) {
            let d = ((p[0] - offset[0] - g[0]).powi(2)
                + (p[1] - offset[1] - g[1]).powi(2)
                + (p[2] - offset[2] - g[2]).powi(2))
            .sqrt();
            sum += d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("joint error over zero joints".to_string()));
    }
    Ok(sum / count as f64 * 1000.0)
}

/// Percentage of correctly ordered person pairs by depth, pooled over
/// scenes. Pairs whose reference depths lie within `tie` of each other are
/// correct when the prediction also keeps them within `tie`, and are
/// excluded from the count otherwise, so unknowable orderings are never
/// penalized. Depths are meters; `tie` defaults to 0.01 in callers.
pub fn pcod_percent(
    pred_depths: &[Vec<f64>],
    gt_depths: &[Vec<f64>],
    tie: f64,
) -> Result<f64> {
    if pred_depths.len() != gt_depths.len() {
        return Err(Error::Data("depth ranking scene counts differ".to_string()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (pd, gd) in pred_depths.iter().zip(gt_depths) {
        if pd.len() != gd.len() {
            return Err(Error::Data(
                "depth ranking person counts differ".to_string(),
            ));
        }
        for i in 0..gd.len() {
            for j in (i + 1)..gd.len() {
                let dg = gd[i] - gd[j];
                let dp = pd[i] - pd[j];
                if dg.abs() <= tie {
                    if dp.abs() <= tie {
                        correct += 1;
                        total += 1;
                    }
                } else {
                    total += 1;
                    if dg.signum() == dp.signum() && dp != 0.0 {
                        correct += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::Data("no rankable person pairs".to_string()));
    }
    Ok(correct as f64 / total as f64 * 100.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
}

impl MatchCounts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.missed;
        if denom == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / denom as f64
    }
}

/// Greedy one-to-one matching of predicted to reference roots by ascending
/// Euclidean distance; a pair matches when its distance is at most
/// `threshold` meters. Counts pool over scenes.
pub fn match_roots(
    pred_roots: &[Vec<[f64; 3]>],
    gt_roots: &[Vec<[f64; 3]>],
    threshold: f64,
) -> Result<MatchCounts> {
    if pred_roots.len() != gt_roots.len() {
        return Err(Error::Data("matching scene counts differ".to_string()));
    }
    let mut counts = MatchCounts::default();
    for (preds, gts) in pred_roots.iter().zip(gt_roots) {
        let mut pairs = Vec::with_capacity(preds.len() * gts.len());
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                let d = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2))
                    .sqrt();
                if d <= threshold {
                    pairs.push((d, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut pred_used = vec![false; preds.len()];
        let mut gt_used = vec![false; gts.len()];
        for (_, i, j) in pairs {
            if !pred_used[i] && !gt_used[j] {
                pred_used[i] = true;
                gt_used[j] = true;
                counts.tp += 1;
            }
        }
        counts.fp += pred_used.iter().filter(|u| !**u).count();
        counts.missed += gt_used.iter().filter(|u| !**u).count();
    }
    Ok(counts)
}

/// Population standard deviation, in millimeters, of root positions
/// projected onto the `up` direction, averaged over scenes. Zero means
/// every scene's crowd stands on one plane orthogonal to `up`.
pub fn plane_consistency_mm(roots: &[Vec<[f64; 3]>], up: &[f64; 3]) -> Result<f64> {
    let norm = (up[0] * up[0] + up[1] * up[1] + up[2] * up[2]).sqrt();
    if norm < 1e-12 {
        return Err(Error::Data("up direction is zero".to_string()));
    }
    let u = [up[0] / norm, up[1] / norm, up[2] / norm];
    let mut scene_stds = Vec::with_capacity(roots.len());
    for scene in roots {
        if scene.is_empty() {
            continue;
        }
        let hs: Vec<f64> = scene
            .iter()
            .map(|r| r[0] * u[0] + r[1] * u[1] + r[2] * u[2])
            .collect();
        let mean = hs.iter().sum::<f64>() / hs.len() as f64;
        let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / hs.len() as f64;
        scene_stds.push(var.sqrt());
    }
    if scene_stds.is_empty() {
        return Err(Error::Data("no scenes with persons".to_string()));
    }
    Ok(scene_stds.iter().sum::<f64>() / scene_stds.len() as f64 * 1000.0)
}

/// Mean unit body axis (ankle midpoint toward head top) over a set of
/// persons' absolute joints, normalized. Used as the reference up direction
/// when extrinsics are not stored.
pub fn mean_up_direction(
    joints: &[Vec<[f64; 3]>],
    head_top: usize,
    left_ankle: usize,
    right_ankle: usize,
) -> Result<[f64; 3]> {
    if joints.is_empty() {
        return Err(Error::Data("no persons for up direction".to_string()));
    }
    let mut acc = [0.0; 3];
    for person in joints {
        let top = person[head_top];
        let mid = [
            (person[left_ankle][0] + person[right_ankle][0]) / 2.0,
            (person[left_ankle][1] + person[right_ankle][1]) / 2.0,
            (person[left_ankle][2] + person[right_ankle][2]) / 2.0,
        ];
        let axis = [top[0] - mid[0], top[1] - mid[1], top[2] - mid[2]];
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n < 1e-9 {
            return Err(Error::Degenerate("degenerate body axis".to_string()));
        }
        acc[0] += axis[0] / n;
        acc[1] += axis[1] / n;
        acc[2] += axis[2] / n;
    }
    let n = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
    if n < 1e-9 {
        return Err(Error::Degenerate(
            "body axes cancel, no mean up direction".to_string(),
        ));
    }
    Ok([acc[0] / n, acc[1] / n, acc[2] / n])
}
