//! Training, evaluation and label-free adaptation.
//!
//! A [`Model`] owns the parameter store, the reasoning network and the
//! skeleton. Training runs scene-level SGD with Adam: each scene builds a
//! fresh tape, the per-scene gradients are averaged over the batch, and a
//! non-finite loss or gradient aborts with the last good checkpoint intact
//! rather than propagating garbage into the parameters. All sampling is
//! seeded, so reruns with one configuration are bit-identical.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::body_model::{camera, BoxInfo, Skeleton, BETA_DIM};
use crate::config::{AdaptConfig, MetricsConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::grouping::{build_multiscale, cosine_affinity, IndividualFeature};
use crate::losses::{self, LossInputs, LossReport, LossWeights};
use crate::metrics;
use crate::numerics::checkpoint;
use crate::numerics::params::ParamStore;
use crate::numerics::tape::Tape;
use crate::numerics::AdamState;
use crate::reasoning::{PersonVars, ReasoningConfig, ReasoningParams};
use crate::synth::{Dataset, Person, PersonGt, Scene};
use crate::util::mix_seed_n;

#[derive(Clone)]
pub struct Model {
    pub store: ParamStore,
    pub net: ReasoningParams,
    pub skel: Skeleton,
}

impl Model {
    pub fn new(cfg: ReasoningConfig, seed: u64) -> Result<Self> {
        let skel = Skeleton::default_body();
        if skel.num_joints() != cfg.num_joints {
            return Err(Error::Config(format!(
                "model configured for {} joints but the skeleton has {}",
                cfg.num_joints,
                skel.num_joints()
            )));
        }
        let mut store = ParamStore::new();
        let net = ReasoningParams::new(&mut store, cfg, seed)?;
        Ok(Model { store, net, skel })
    }

    pub fn cfg(&self) -> &ReasoningConfig {
        &self.net.cfg
    }

    /// Serialize parameters plus the model configuration and any extra
    /// metadata fields.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> String {
        let mut meta = serde_json::Map::new();
        meta.insert(
            "model".to_string(),
            serde_json::to_value(&self.net.cfg).expect("config serializes"),
        );
        if let serde_json::Value::Object(fields) = extra {
            for (k, v) in fields {
                meta.insert(k, v);
            }
        }
        checkpoint::to_json(&self.store, serde_json::Value::Object(meta))
    }

    /// Rebuild a model from a checkpoint produced by [`Model::to_checkpoint`].
    pub fn from_checkpoint(json: &str) -> Result<(Self, serde_json::Value)> {
        let (loaded, meta) = checkpoint::from_json(json)?;
        let cfg_value = meta.get("model").cloned().ok_or_else(|| {
            Error::Data("checkpoint metadata missing the model configuration".to_string())
        })?;
        let cfg: ReasoningConfig = serde_json::from_value(cfg_value)?;
        let mut model = Model::new(cfg, 0)?;
        model.store.load_from(&loaded)?;
        Ok((model, meta))
    }
}

/// Per-person inputs of one scene, ready for the network.
fn scene_features(persons: &[Person], cam: &crate::body_model::CameraIntrinsics) -> Result<(Vec<IndividualFeature>, Vec<BoxInfo>)> {
    let mut feats = Vec::with_capacity(persons.len());
    let mut boxes = Vec::with_capacity(persons.len());
    for p in persons {
        let info = camera::encode_box(p.box2d, cam)?;
        feats.push(IndividualFeature {
            q: p.q.clone(),
            b: info.encoded,
        });
        boxes.push(info);
    }
    Ok((feats, boxes))
}

/// Run the network on one scene and regress every person.
pub fn forward_scene(
    model: &Model,
    tape: &mut Tape,
    bound: &crate::numerics::params::Bound,
    persons: &[Person],
    cam: &crate::body_model::CameraIntrinsics,
) -> Result<Vec<PersonVars>> {
    let (feats, boxes) = scene_features(persons, cam)?;
    let graph = if model.cfg().use_hypergraph {
        Some(build_multiscale(
            &cosine_affinity(&feats),
            &model.cfg().k_list,
        )?)
    } else {
        None
    };
    let vprime = model.net.run(tape, bound, &feats, graph.as_ref())?;
    vprime
        .into_iter()
        .zip(&boxes)
        .map(|(v, b)| model.net.regress(tape, bound, v, b, cam, &model.skel))
        .collect()
}

/// Split an oversized scene into chunks of at most `cap` persons. Persons
/// are ordered by box center so each chunk keeps spatial neighbors, and
/// chunk sizes differ by at most one.
pub fn split_scene(scene: &Scene, cap: usize) -> Vec<Scene> {
    let n = scene.persons.len();
    if n <= cap {
        return vec![scene.clone()];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let ca = scene.persons[a].box2d;
        let cb = scene.persons[b].box2d;
        let ka = (ca[0] + ca[2], ca[1] + ca[3]);
        let kb = (cb[0] + cb[2], cb[1] + cb[3]);
        ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
    });
    let chunks = n.div_ceil(cap);
    let base = n / chunks;
    let extra = n % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut cursor = 0;
    for c in 0..chunks {
        let size = base + usize::from(c < extra);
        let members: Vec<Person> = idx[cursor..cursor + size]
            .iter()
            .map(|&i| scene.persons[i].clone())
            .collect();
        cursor += size;
        out.push(Scene {
            id: scene.id,
            persons: members,
            pseudo_gt: scene.pseudo_gt,
        });
    }
    out
}

fn require_gt(persons: &[Person]) -> Result<Vec<&PersonGt>> {
    persons
        .iter()
        .map(|p| {
            p.gt.as_ref().ok_or_else(|| {
                Error::Data("scene lacks 3D ground truth for supervised use".to_string())
            })
        })
        .collect()
}

struct SceneTargets {
    joints2d: Vec<Vec<[f64; 2]>>,
    vis: Vec<Vec<bool>>,
    theta6: Vec<Vec<f64>>,
    beta: Vec<[f64; BETA_DIM]>,
    joints_rel: Vec<Vec<[f64; 3]>>,
}

fn supervised_targets(persons: &[Person]) -> Result<SceneTargets> {
    let gts = require_gt(persons)?;
    let joints_rel = gts
        .iter()
        .map(|gt| {
            gt.joints3d
                .iter()
                .map(|j| {
                    [
                        j[0] - gt.trans[0],
                        j[1] - gt.trans[1],
                        j[2] - gt.trans[2],
                    ]
                })
                .collect()
        })
        .collect();
    Ok(SceneTargets {
        joints2d: persons.iter().map(|p| p.joints2d.clone()).collect(),
        vis: persons.iter().map(|p| p.vis.clone()).collect(),
        theta6: gts.iter().map(|gt| gt.theta6.clone()).collect(),
        beta: gts.iter().map(|gt| gt.beta).collect(),
        joints_rel,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub total: f64,
    pub reproj: f64,
    pub param: f64,
    pub joint: f64,
    pub crowd: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

pub struct TrainArtifacts {
    /// Final parameters, or the last good checkpoint when aborted.
    pub checkpoint_json: String,
    /// One JSON record per step, wall time included.
    pub log_jsonl: String,
    /// `step,total,reproj,param,joint,crowd` per step; no wall time, so two
    /// identical runs produce identical files.
    pub curve_csv: String,
    pub steps_run: usize,
    pub final_loss: f64,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

struct SceneSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl SceneSampler {
    fn new(count: usize, seed: u64) -> Self {
        let mut s = SceneSampler {
            order: (0..count).collect(),
            pos: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed_n(self.seed, "shuffle", self.epoch));
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}

/// Mean loss report over a batch.
fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut m = LossReport::default();
    for r in reports {
        m.total += r.total / n;
        m.reproj += r.reproj / n;
        m.param += r.param / n;
        m.joint += r.joint / n;
        m.crowd += r.crowd / n;
    }
    m
}

/// Supervised training on a labeled dataset. Scenes over the person cap
/// are split up front; each optimizer step averages gradients over
/// `batch` scenes drawn from a seeded shuffle.
pub fn train(model: &mut Model, data: &Dataset, tcfg: &TrainConfig) -> Result<TrainArtifacts> {
    if data.header.feature_dim != model.cfg().feature_dim {
        return Err(Error::Data(format!(
            "dataset codes have dimension {} but the model expects {}",
            data.header.feature_dim,
            model.cfg().feature_dim
        )));
    }
    let cam = data.header.cam;
    let scenes: Vec<Scene> = data
        .scenes
        .iter()
        .flat_map(|s| split_scene(s, tcfg.max_persons))
        .filter(|s| !s.persons.is_empty())
        .collect();
    if scenes.is_empty() {
        return Err(Error::Data("no scenes to train on".to_string()));
    }
    let targets: Vec<SceneTargets> = scenes
        .iter()
        .map(|s| supervised_targets(&s.persons))
        .collect::<Result<_>>()?;

    let use_crowd = tcfg.weights.crowd > 0.0;
    let mut adam = AdamState::new(&model.store, tcfg.lr);
    let mut sampler = SceneSampler::new(scenes.len(), tcfg.seed);
    let meta = |steps: usize| {
        serde_json::json!({
            "trained_steps": steps,
            "train_seed": tcfg.seed,
        })
    };
    let mut last_good = model.to_checkpoint(meta(0));
    let mut log_jsonl = String::new();
    let mut curve_csv = String::from("step,total,reproj,param,joint,crowd\n");
    let mut final_loss = f64::NAN;

    fn abort(
        msg: String,
        steps: usize,
        log: String,
        curve: String,
        last: String,
        final_loss: f64,
    ) -> Result<TrainArtifacts> {
        log::warn!("training aborted at step {steps}: {msg}");
        Ok(TrainArtifacts {
            checkpoint_json: last,
            log_jsonl: log,
            curve_csv: curve,
            steps_run: steps,
            final_loss,
            aborted: Some(msg),
        })
    }

    for step in 0..tcfg.steps {
        let started = Instant::now();
        let mut grads: Vec<crate::numerics::Tensor> = model
            .store
            .iter()
            .map(|(_, t)| crate::numerics::Tensor::zeros(t.shape()))
            .collect();
        let mut reports = Vec::with_capacity(tcfg.batch);
        let mut failed: Option<String> = None;

        for _ in 0..tcfg.batch {
            let scene_idx = sampler.next();
            let scene = &scenes[scene_idx];
            let target = &targets[scene_idx];
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let outcome = forward_scene(model, &mut tape, &bound, &scene.persons, &cam)
                .and_then(|persons| {
                    let inputs = LossInputs {
                        joints2d: &target.joints2d,
                        vis: &target.vis,
                        cam: &cam,
                        gt_params: Some((&target.theta6, &target.beta)),
                        gt_joints_rel: Some(&target.joints_rel),
                        use_crowd,
                    };
                    losses::total_loss(&mut tape, &persons, &inputs, &tcfg.weights, &model.skel)
                })
                .and_then(|(total, report)| {
                    if !report.total.is_finite() {
                        return Err(Error::Numerics(format!(
                            "loss became {} on scene {}",
                            report.total, scene.id
                        )));
                    }
                    let node_grads = tape.backward(total)?;
                    Ok((report, bound.collect_grads(&model.store, &node_grads)))
                });
            match outcome {
                Ok((report, scene_grads)) => {
                    reports.push(report);
                    for (acc, g) in grads.iter_mut().zip(&scene_grads) {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v / tcfg.batch as f64;
                        }
                    }
                }
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(msg) = failed {
            return abort(msg, step, log_jsonl, curve_csv, last_good, final_loss);
        }

        let grad_norm = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if let Err(e) = adam.step(&mut model.store, &grads) {
            return abort(e.to_string(), step, log_jsonl, curve_csv, last_good, final_loss);
        }

        let report = mean_report(&reports);
        final_loss = report.total;
        let record = TrainLogRecord {
            step,
            total: report.total,
            reproj: report.reproj,
            param: report.param,
            joint: report.joint,
            crowd: report.crowd,
            grad_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1000.0,
        };
        log_jsonl.push_str(&serde_json::to_string(&record)?);
        log_jsonl.push('\n');
        curve_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            step, report.total, report.reproj, report.param, report.joint, report.crowd
        ));
        if (step + 1) % tcfg.checkpoint_every == 0 {
            last_good = model.to_checkpoint(meta(step + 1));
        }
        if step % 100 == 0 {
            log::info!("step {step}: loss {:.6}", report.total);
        }
    }

    Ok(TrainArtifacts {
        checkpoint_json: model.to_checkpoint(meta(tcfg.steps)),
        log_jsonl,
        curve_csv,
        steps_run: tcfg.steps,
        final_loss,
        aborted: None,
    })
}

/// Absolute per-person joint positions predicted for one scene.
pub fn predict_scene(
    model: &Model,
    persons: &[Person],
    cam: &crate::body_model::CameraIntrinsics,
) -> Result<Vec<Vec<[f64; 3]>>> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let vars = forward_scene(model, &mut tape, &bound, persons, cam)?;
    Ok(vars
        .iter()
        .map(|p| {
            let t = tape.value(p.trans).data().to_vec();
            p.joints_rel
                .iter()
                .map(|&j| {
                    let r = tape.value(j).data();
                    [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
                })
                .collect()
        })
        .collect())
}

/// Fill a dataset's ground-truth slots with model predictions, marking the
/// scenes as pseudo-labeled. Detections and codes are untouched.
pub fn predict_dataset(model: &Model, data: &Dataset) -> Result<Dataset> {
    let cam = data.header.cam;
    let mut out = data.clone();
    for scene in &mut out.scenes {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let vars = forward_scene(model, &mut tape, &bound, &scene.persons, &cam)?;
        for (person, v) in scene.persons.iter_mut().zip(&vars) {
            let trans_v = tape.value(v.trans).data();
            let trans = [trans_v[0], trans_v[1], trans_v[2]];
            let joints3d = v
                .joints_rel
                .iter()
                .map(|&j| {
                    let r = tape.value(j).data();
                    [r[0] + trans[0], r[1] + trans[1], r[2] + trans[2]]
                })
                .collect();
            let mut beta = [0.0; BETA_DIM];
            beta.copy_from_slice(tape.value(v.beta).data());
            person.gt = Some(PersonGt {
                theta6: tape.value(v.theta).data().to_vec(),
                beta,
                trans,
                joints3d,
            });
        }
        scene.pseudo_gt = true;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SceneEval {
    pub id: u64,
    pub persons: usize,
    pub mpjpe_abs_mm: f64,
    pub mpjpe_root_mm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub persons: usize,
    pub mpjpe_abs_mm: f64,
    pub mpjpe_root_mm: f64,
    /// Persons whose visible joint fraction is at most the configured cut.
    pub occluded_persons: usize,
    pub occluded_mpjpe_abs_mm: Option<f64>,
    pub occluded_mpjpe_root_mm: Option<f64>,
    pub pcod_percent: f64,
    /// `(threshold_m, f1)` pairs.
    pub f1: Vec<(f64, f64)>,
    pub plane_consistency_mm: f64,
    pub per_scene: Vec<SceneEval>,
    /// `(reference_depth, predicted_depth)` per person, for scatter plots.
    pub scatter: Vec<[f64; 2]>,
}

/// Score externally produced predictions against a labeled dataset.
/// `preds` holds absolute joints per scene and person, matching the
/// dataset's layout.
pub fn evaluate_predictions(
    preds: &[Vec<Vec<[f64; 3]>>],
    data: &Dataset,
    skel: &Skeleton,
    mcfg: &MetricsConfig,
) -> Result<EvalReport> {
    if preds.len() != data.scenes.len() {
        return Err(Error::Data(format!(
            "{} prediction scenes for {} dataset scenes",
            preds.len(),
            data.scenes.len()
        )));
    }
    let root = skel.root;
    let mut all_pred: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut all_gt: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut occ_pred: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut occ_gt: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut pred_depths: Vec<Vec<f64>> = Vec::new();
    let mut gt_depths: Vec<Vec<f64>> = Vec::new();
    let mut pred_roots: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut gt_roots: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut per_scene = Vec::new();
    let mut scatter = Vec::new();

    for (scene, scene_preds) in data.scenes.iter().zip(preds) {
        if scene_preds.len() != scene.persons.len() {
            return Err(Error::Data(format!(
                "scene {} has {} persons but {} predictions",
                scene.id,
                scene.persons.len(),
                scene_preds.len()
            )));
        }
        let gts = require_gt(&scene.persons)?;
        let mut s_pred = Vec::new();
        let mut s_gt = Vec::new();
        let mut s_pd = Vec::new();
        let mut s_gd = Vec::new();
        let mut s_pr = Vec::new();
        let mut s_gr = Vec::new();
        for ((person, gt), pred) in scene.persons.iter().zip(&gts).zip(scene_preds) {
            if pred.len() != gt.joints3d.len() {
                return Err(Error::Data(
                    "prediction joint count does not match ground truth".to_string(),
                ));
            }
            s_pred.push(pred.clone());
            s_gt.push(gt.joints3d.clone());
            s_pd.push(pred[root][2]);
            s_gd.push(gt.joints3d[root][2]);
            s_pr.push(pred[root]);
            s_gr.push(gt.joints3d[root]);
            scatter.push([gt.joints3d[root][2], pred[root][2]]);
            if person.visible_fraction() <= mcfg.occluded_vis_max {
                occ_pred.push(pred.clone());
                occ_gt.push(gt.joints3d.clone());
            }
        }
        per_scene.push(SceneEval {
            id: scene.id,
            persons: scene.persons.len(),
            mpjpe_abs_mm: metrics::mpjpe_mm(&s_pred, &s_gt, false, root)?,
            mpjpe_root_mm: metrics::mpjpe_mm(&s_pred, &s_gt, true, root)?,
        });
        all_pred.extend(s_pred);
        all_gt.extend(s_gt);
        pred_depths.push(s_pd);
        gt_depths.push(s_gd);
        pred_roots.push(s_pr);
        gt_roots.push(s_gr);
    }

    let up = metrics::mean_up_direction(&all_gt, skel.head_top, skel.left_ankle, skel.right_ankle)?;
    let f1 = mcfg
        .f1_thresholds
        .iter()
        .map(|&t| Ok((t, metrics::match_roots(&pred_roots, &gt_roots, t)?.f1())))
        .collect::<Result<Vec<(f64, f64)>>>()?;

    Ok(EvalReport {
        scenes: data.scenes.len(),
        persons: all_pred.len(),
        mpjpe_abs_mm: metrics::mpjpe_mm(&all_pred, &all_gt, false, root)?,
        mpjpe_root_mm: metrics::mpjpe_mm(&all_pred, &all_gt, true, root)?,
        occluded_persons: occ_pred.len(),
        occluded_mpjpe_abs_mm: if occ_pred.is_empty() {
            None
        } else {
            Some(metrics::mpjpe_mm(&occ_pred, &occ_gt, false, root)?)
        },
        occluded_mpjpe_root_mm: if occ_pred.is_empty() {
            None
        } else {
            Some(metrics::mpjpe_mm(&occ_pred, &occ_gt, true, root)?)
        },
        pcod_percent: metrics::pcod_percent(&pred_depths, &gt_depths, mcfg.tie_band)?,
        f1,
        plane_consistency_mm: metrics::plane_consistency_mm(&pred_roots, &up)?,
        per_scene,
        scatter,
    })
}

/// Run the model over a labeled dataset and score it.
pub fn evaluate(model: &Model, data: &Dataset, mcfg: &MetricsConfig) -> Result<EvalReport> {
    if data.header.feature_dim != model.cfg().feature_dim {
        return Err(Error::Data(
            "dataset feature dimension does not match the model".to_string(),
        ));
    }
    let cam = data.header.cam;
    let preds = data
        .scenes
        .iter()
        .map(|s| predict_scene(model, &s.persons, &cam))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, data, &model.skel, mcfg)
}

/// Mean pixel distance between projected predicted joints and stored
/// detections, pooled over visible joints.
pub fn mean_pixel_error(model: &Model, data: &Dataset) -> Result<f64> {
    let cam = data.header.cam;
    let mut sum = 0.0;
    let mut count = 0usize;
    for scene in &data.scenes {
        let preds = predict_scene(model, &scene.persons, &cam)?;
        for (person, joints) in scene.persons.iter().zip(&preds) {
            for (j, visible) in person.vis.iter().enumerate() {
                if !visible {
                    continue;
                }
                let px = camera::project_point(&joints[j], &cam)?;
                let d = ((px[0] - person.joints2d[j][0]).powi(2)
                    + (px[1] - person.joints2d[j][1]).powi(2))
                .sqrt();
                sum += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("no visible joints to measure against".to_string()));
    }
    Ok(sum / count as f64)
}

pub struct AdaptOutcome {
    /// The adapted copy; the input model is untouched.
    pub model: Model,
    pub before_px: f64,
    pub after_px: f64,
    pub iters_run: usize,
    pub diverged: bool,
    /// The adaptation data with predictions written into the ground-truth
    /// slots.
    pub pseudo_labeled: Dataset,
}

/// Label-free adaptation: full-batch Adam on the reprojection term (plus
/// the crowd term when enabled) against a detections-only dataset. If the
/// loss blows past `divergence_factor` times its starting value the
/// adaptation is abandoned and the copy reverts to the original weights.
pub fn adapt_to_2d(
    model: &Model,
    data: &Dataset,
    acfg: &AdaptConfig,
    weights: &LossWeights,
) -> Result<AdaptOutcome> {
    if data.header.feature_dim != model.cfg().feature_dim {
        return Err(Error::Data(
            "dataset feature dimension does not match the model".to_string(),
        ));
    }
    if data.scenes.is_empty() {
        return Err(Error::Data("no scenes to adapt to".to_string()));
    }
    let cam = data.header.cam;
    let mut adapted = model.clone();
    let before_px = mean_pixel_error(&adapted, data)?;
    let mut adam = AdamState::new(&adapted.store, acfg.lr);
    let mut initial_loss = None;
    let mut diverged = false;
    let mut iters_run = 0;

    'outer: for _ in 0..acfg.iters {
        let mut grads: Vec<crate::numerics::Tensor> = adapted
            .store
            .iter()
            .map(|(_, t)| crate::numerics::Tensor::zeros(t.shape()))
            .collect();
        let scale = 1.0 / data.scenes.len() as f64;
        let mut loss_sum = 0.0;
        for scene in &data.scenes {
            let mut tape = Tape::new();
            let bound = adapted.store.bind(&mut tape);
            let persons = forward_scene(&adapted, &mut tape, &bound, &scene.persons, &cam)?;
            let joints2d: Vec<Vec<[f64; 2]>> =
                scene.persons.iter().map(|p| p.joints2d.clone()).collect();
            let vis: Vec<Vec<bool>> = scene.persons.iter().map(|p| p.vis.clone()).collect();
            let inputs = LossInputs {
                joints2d: &joints2d,
                vis: &vis,
                cam: &cam,
                gt_params: None,
                gt_joints_rel: None,
                use_crowd: acfg.use_crowd && weights.crowd > 0.0,
            };
            let (total, report) =
                losses::total_loss(&mut tape, &persons, &inputs, weights, &adapted.skel)?;
            if !report.total.is_finite() {
                return Err(Error::Numerics(
                    "adaptation loss is not finite".to_string(),
                ));
            }
            loss_sum += report.total * scale;
            let node_grads = tape.backward(total)?;
            for (acc, g) in grads
                .iter_mut()
                .zip(bound.collect_grads(&adapted.store, &node_grads))
            {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v * scale;
                }
            }
        }
        let first = *initial_loss.get_or_insert(loss_sum);
        if loss_sum > acfg.divergence_factor * first {
            diverged = true;
            break 'outer;
        }
        adam.step(&mut adapted.store, &grads)?;
        iters_run += 1;
    }

    if diverged {
        adapted = model.clone();
        log::warn!("adaptation diverged after {iters_run} iterations, reverting");
    }
    let after_px = mean_pixel_error(&adapted, data)?;
    let pseudo_labeled = predict_dataset(&adapted, data)?;
    Ok(AdaptOutcome {
        model: adapted,
        before_px,
        after_px,
        iters_run,
        diverged,
        pseudo_labeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GenConfig;
    use crate::synth::{self, SceneConfig};

    fn small_model_cfg() -> ReasoningConfig {
        ReasoningConfig {
            feature_dim: 8,
            hidden: 16,
            hidden_layers: 1,
            k_list: vec![1, 2],
            iterations: 1,
            share_scales: false,
            use_hypergraph: true,
            num_joints: 14,
        }
    }

    fn small_data(count: usize, seed: u64) -> Dataset {
        let scfg = SceneConfig {
            persons: 4,
            groups: 2,
            ..SceneConfig::default()
        };
        let cam = crate::body_model::CameraIntrinsics::new(1000.0, 1920.0, 1080.0);
        let skel = Skeleton::default_body();
        synth::generate_dataset(&scfg, &cam, 8, GenConfig::default().encoder_seed, &skel, count, seed)
            .unwrap()
    }

    fn quick_train_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch: 2,
            lr: 1e-3,
            seed: 5,
            max_persons: 20,
            weights: LossWeights::default(),
            checkpoint_every: 1000,
        }
    }

    #[test]
    fn short_training_reduces_the_loss() {
        let mut model = Model::new(small_model_cfg(), 3).unwrap();
        let data = small_data(6, 21);
        let arts = train(&mut model, &data, &quick_train_cfg(40)).unwrap();
        assert!(arts.aborted.is_none());
        assert_eq!(arts.steps_run, 40);
        let first: serde_json::Value =
            serde_json::from_str(arts.log_jsonl.lines().next().unwrap()).unwrap();
        let initial = first["total"].as_f64().unwrap();
        assert!(
            arts.final_loss < initial,
            "loss did not fall: {initial} -> {}",
            arts.final_loss
        );
        assert_eq!(arts.curve_csv.lines().count(), 41);
        assert!(!arts.curve_csv.contains("wall"));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = small_data(4, 33);
        let run = || {
            let mut model = Model::new(small_model_cfg(), 3).unwrap();
            train(&mut model, &data, &quick_train_cfg(12)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.checkpoint_json, b.checkpoint_json);
        assert_eq!(a.curve_csv, b.curve_csv);
    }

    #[test]
    fn checkpoints_roundtrip_through_the_model_wrapper() {
        let mut model = Model::new(small_model_cfg(), 3).unwrap();
        let data = small_data(2, 9);
        train(&mut model, &data, &quick_train_cfg(3)).unwrap();
        let json = model.to_checkpoint(serde_json::json!({"trained_steps": 3}));
        let (loaded, meta) = Model::from_checkpoint(&json).unwrap();
        assert_eq!(meta["trained_steps"], 3);
        assert_eq!(loaded.cfg(), model.cfg());
        for (i, (name, tensor)) in model.store.iter().enumerate() {
            let (lname, ltensor) = loaded.store.iter().nth(i).unwrap();
            assert_eq!(name, lname);
            assert_eq!(tensor, ltensor);
        }
    }

    #[test]
    fn oversized_scenes_split_into_balanced_spatial_chunks() {
        let data = small_data(1, 77);
        let mut scene = data.scenes[0].clone();
        let mut clones = Vec::new();
        for shift in 0..7 {
            for p in &scene.persons {
                let mut c = p.clone();
                c.box2d[0] += shift as f64 * 3.0;
                c.box2d[2] += shift as f64 * 3.0;
                clones.push(c);
            }
        }
        scene.persons = clones;
        assert_eq!(scene.persons.len(), 28);
        let parts = split_scene(&scene, 20);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].persons.len(), 14);
        assert_eq!(parts[1].persons.len(), 14);
        let centers = |s: &Scene| {
            s.persons
                .iter()
                .map(|p| (p.box2d[0] + p.box2d[2]) / 2.0)
                .collect::<Vec<f64>>()
        };
        let max_first = centers(&parts[0]).into_iter().fold(f64::MIN, f64::max);
        let min_second = centers(&parts[1]).into_iter().fold(f64::MAX, f64::min);
        assert!(max_first <= min_second, "chunks must not interleave spatially");

        let small = split_scene(&data.scenes[0], 20);
        assert_eq!(small.len(), 1);
    }

    #[test]
    fn ground_truth_as_prediction_scores_perfectly() {
        let data = small_data(3, 55);
        let skel = Skeleton::default_body();
        let preds: Vec<Vec<Vec<[f64; 3]>>> = data
            .scenes
            .iter()
            .map(|s| {
                s.persons
                    .iter()
                    .map(|p| p.gt.as_ref().unwrap().joints3d.clone())
                    .collect()
            })
            .collect();
        let report =
            evaluate_predictions(&preds, &data, &skel, &MetricsConfig::default()).unwrap();
        assert!(report.mpjpe_abs_mm < 1e-9);
        assert!(report.mpjpe_root_mm < 1e-9);
        assert!((report.pcod_percent - 100.0).abs() < 1e-9);
        assert!(report.f1.iter().all(|(_, f)| (f - 1.0).abs() < 1e-12));
    }

    #[test]
    fn swapping_two_depths_zeroes_the_ranking_score() {
        let data = small_data(1, 91);
        let skel = Skeleton::default_body();
        let mut scene = data.scenes[0].clone();
        scene.persons.truncate(2);
        let single = Dataset::new(data.header.cam, data.header.feature_dim, 42, vec![scene.clone()]);
        let a = scene.persons[0].gt.as_ref().unwrap();
        let b = scene.persons[1].gt.as_ref().unwrap();
        let dz = b.joints3d[0][2] - a.joints3d[0][2];
        assert!(dz.abs() > 0.02, "depths too close for the swap test");
        let shift = |joints: &[[f64; 3]], by: f64| {
            joints.iter().map(|j| [j[0], j[1], j[2] + by]).collect::<Vec<_>>()
        };
        let preds = vec![vec![
            shift(&a.joints3d, dz),
            shift(&b.joints3d, -dz),
        ]];
        let report =
            evaluate_predictions(&preds, &single, &skel, &MetricsConfig::default()).unwrap();
        assert!(report.pcod_percent < 1e-9);
    }

    #[test]
    fn untrained_model_evaluates_without_panicking() {
        let model = Model::new(small_model_cfg(), 1).unwrap();
        let data = small_data(2, 13);
        let report = evaluate(&model, &data, &MetricsConfig::default()).unwrap();
        assert!(report.mpjpe_abs_mm.is_finite());
        assert_eq!(report.scenes, 2);
        assert_eq!(report.scatter.len(), report.persons);
    }

    #[test]
    fn adaptation_reduces_pixel_error_and_leaves_the_original_alone() {
        let mut model = Model::new(small_model_cfg(), 3).unwrap();
        let train_data = small_data(6, 21);
        train(&mut model, &train_data, &quick_train_cfg(60)).unwrap();

        let mut held_out = small_data(3, 99);
        held_out.strip_gt();
        let snapshot = model.to_checkpoint(serde_json::json!({}));
        let acfg = AdaptConfig {
            iters: 25,
            ..AdaptConfig::default()
        };
        let outcome = adapt_to_2d(&model, &held_out, &acfg, &LossWeights::default()).unwrap();
        assert!(!outcome.diverged);
        assert!(
            outcome.after_px < outcome.before_px,
            "pixel error went {} -> {}",
            outcome.before_px,
            outcome.after_px
        );
        assert_eq!(model.to_checkpoint(serde_json::json!({})), snapshot);
        assert!(outcome.pseudo_labeled.scenes.iter().all(|s| s.pseudo_gt));
        assert!(outcome
            .pseudo_labeled
            .scenes
            .iter()
            .flat_map(|s| &s.persons)
            .all(|p| p.gt.is_some()));
    }

    #[test]
    fn training_requires_ground_truth() {
        let mut model = Model::new(small_model_cfg(), 3).unwrap();
        let mut data = small_data(2, 5);
        data.strip_gt();
        assert!(train(&mut model, &data, &quick_train_cfg(2)).is_err());
    }

    #[test]
    fn mismatched_feature_dimension_is_rejected() {
        let mut model = Model::new(small_model_cfg(), 3).unwrap();
        let scfg = SceneConfig {
            persons: 3,
            groups: 1,
            ..SceneConfig::default()
        };
        let cam = crate::body_model::CameraIntrinsics::new(1000.0, 1920.0, 1080.0);
        let skel = Skeleton::default_body();
        let data = synth::generate_dataset(&scfg, &cam, 12, 42, &skel, 1, 3).unwrap();
        assert!(train(&mut model, &data, &quick_train_cfg(1)).is_err());
        assert!(evaluate(&model, &data, &MetricsConfig::default()).is_err());
    }
}
