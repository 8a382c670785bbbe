//! Synthetic crowd scene generation.
//!
//! Scenes are built in a world frame with the ground plane at `y = 0` and
//! `+y` pointing down, so "up" is `-y` and the camera sits at
//! `(0, -height, 0)` pitched toward the ground. Persons are grouped into
//! spatial clusters that share a pose primitive, phase and heading; members
//! differ by per-joint rotation noise, heading jitter and body shape. Every
//! stored quantity is camera-frame: the recovered translation plus forward
//! kinematics of the stored parameters reproduces the stored 3D joints
//! exactly, and projecting those gives the stored 2D joints.
//!
//! The per-person code `q` stands in for an image backbone: a fixed random
//! projection of box-normalized visible joints and visibility flags. It is
//! deterministic in the encoder seed, so separately generated datasets can
//! share one encoder.

pub mod dataset;
pub mod poses;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::body_model::kinematics::{
    bone_scales_from_beta, fk_from_rotmats, mat3_mul, mat3_vec, rotation_about_axis, Mat3,
    MAT3_IDENTITY,
};
use crate::body_model::{camera, rot6d, CameraIntrinsics, Skeleton, BETA_DIM};
use crate::error::{Error, Result};
use crate::util::{mix_seed, mix_seed_n};

pub use dataset::{Dataset, DatasetHeader, Person, PersonGt, Scene};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Persons per scene.
    pub persons: usize,
    /// Behavior groups per scene (clamped to the person count).
    pub groups: usize,
    /// Std of per-joint axis-angle noise within a group, radians.
    pub pose_noise: f64,
    /// Nearest ground distance sampled for placement, meters.
    pub z_min: f64,
    /// Depth extent of the placement band, meters.
    pub area: f64,
    /// Probability that a joint is dropped on top of geometric occlusion.
    pub occlusion_rate: f64,
    /// Camera height above the ground, meters.
    pub cam_height: f64,
    /// Camera pitch toward the ground, radians.
    pub cam_pitch: f64,
    /// Minimum distance between any two persons, meters.
    pub min_spacing: f64,
    /// Minimum distance between group centers, meters.
    pub group_spacing: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            persons: 10,
            groups: 3,
            pose_noise: 0.05,
            z_min: 4.0,
            area: 12.0,
            occlusion_rate: 0.3,
            cam_height: 5.0,
            cam_pitch: 0.35,
            min_spacing: 0.55,
            group_spacing: 2.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons == 0 || self.groups == 0 {
            return Err(Error::Config("need at least one person and one group".to_string()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::Config(format!(
                "occlusion_rate {} outside [0, 1]",
                self.occlusion_rate
            )));
        }
        if self.z_min <= 0.5 || self.area < 0.0 {
            return Err(Error::Config(
                "placement band must start in front of the camera".to_string(),
            ));
        }
        if self.cam_height <= 0.0 || !(0.0..1.2).contains(&self.cam_pitch) {
            return Err(Error::Config(
                "camera must be above ground with pitch in [0, 1.2)".to_string(),
            ));
        }
        if self.pose_noise < 0.0 || self.min_spacing <= 0.0 || self.group_spacing <= 0.0 {
            return Err(Error::Config(
                "noise and spacing parameters must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Fixed random projection standing in for an image feature backbone.
/// Input per person: box-normalized 2D joints (occluded entries zeroed)
/// followed by occlusion flags (0 when visible, -1 when hidden, so a fully
/// visible person contributes no flag component). The projected code is
/// rescaled to norm 0.5 so that the box encoding keeps comparable weight
/// when the two are stacked for affinity.
pub struct Encoder {
    m: usize,
    joints: usize,
    w: Vec<f64>,
}

impl Encoder {
    pub fn new(m: usize, joints: usize, seed: u64) -> Self {
        let cols = 3 * joints;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "feature-encoder"));
        let scale = 1.0 / (cols as f64).sqrt();
        let w = (0..m * cols)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        Encoder { m, joints, w }
    }

    pub fn encode(
        &self,
        joints2d: &[[f64; 2]],
        vis: &[bool],
        box2d: &[f64; 4],
    ) -> Result<Vec<f64>> {
        if joints2d.len() != self.joints || vis.len() != self.joints {
            return Err(Error::Data(format!(
                "encoder built for {} joints, got {}",
                self.joints,
                joints2d.len()
            )));
        }
        let d = (box2d[2] - box2d[0]).max(box2d[3] - box2d[1]);
        if d <= 1e-6 {
            return Err(Error::Degenerate("degenerate detection box".to_string()));
        }
        let bcx = (box2d[0] + box2d[2]) / 2.0;
        let bcy = (box2d[1] + box2d[3]) / 2.0;
        let cols = 3 * self.joints;
        let mut x = vec![0.0; cols];
        for (k, p) in joints2d.iter().enumerate() {
            if vis[k] {
                x[2 * k] = (p[0] - bcx) / d;
                x[2 * k + 1] = (p[1] - bcy) / d;
            }
            x[2 * self.joints + k] = if vis[k] { 0.0 } else { -1.0 };
        }
        let mut q: Vec<f64> = (0..self.m)
            .map(|r| {
                let row = &self.w[r * cols..(r + 1) * cols];
                row.iter().zip(&x).map(|(w, v)| w * v).sum()
            })
            .collect();
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in q.iter_mut() {
                *v *= 0.5 / norm;
            }
        }
        Ok(q)
    }
}

fn axis_angle_mat(aa: &[f64; 3]) -> Mat3 {
    let angle = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
    if angle < 1e-12 {
        MAT3_IDENTITY
    } else {
        rotation_about_axis([aa[0] / angle, aa[1] / angle, aa[2] / angle], angle)
    }
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    g * std
}

/// Horizontal placement limit at ground depth `z` keeping the root inside
/// roughly the central 85% of the image width.
fn x_limit(z: f64, cfg: &SceneConfig, cam: &CameraIntrinsics) -> f64 {
    let root_above_ground = 0.95;
    let z_cam = cfg.cam_pitch.sin() * (cfg.cam_height - root_above_ground)
        + cfg.cam_pitch.cos() * z;
    0.425 * cam.width / cam.focal * z_cam
}

struct PlacedGroup {
    center: [f64; 2],
    members: usize,
    primitive: usize,
    phase: f64,
    heading: f64,
}

fn place_groups(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
) -> Result<Vec<PlacedGroup>> {
    let group_count = cfg.groups.min(cfg.persons);
    let base = cfg.persons / group_count;
    let extra = cfg.persons % group_count;
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(group_count);
    let mut attempts = 0;
    while centers.len() < group_count {
        attempts += 1;
        if attempts > 200 * group_count {
            return Err(Error::Degenerate(format!(
                "could not place {group_count} group centers at spacing {}",
                cfg.group_spacing
            )));
        }
        let z = rng.gen_range(cfg.z_min..=cfg.z_min + cfg.area.max(1e-9));
        let xl = x_limit(z, cfg, cam) * 0.8;
        let x = rng.gen_range(-xl..=xl);
        let ok = centers
            .iter()
            .all(|c| ((c[0] - x).powi(2) + (c[1] - z).powi(2)).sqrt() >= cfg.group_spacing);
        if ok {
            centers.push([x, z]);
        }
    }
    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(g, center)| PlacedGroup {
            center,
            members: base + usize::from(g < extra),
            primitive: rng.gen_range(0..poses::PRIMITIVE_COUNT),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect())
}

fn place_members(
    rng: &mut ChaCha8Rng,
    groups: &[PlacedGroup],
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
) -> Result<Vec<(usize, [f64; 2])>> {
    let mut placed: Vec<(usize, [f64; 2])> = Vec::with_capacity(cfg.persons);
    for (g, group) in groups.iter().enumerate() {
        let radius = 0.8_f64.max(0.4 * (group.members as f64).sqrt() * cfg.min_spacing * 2.0);
        for _ in 0..group.members {
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > 400 {
                    return Err(Error::Degenerate(format!(
                        "could not place a member of group {g} at spacing {}",
                        cfg.min_spacing
                    )));
                }
                let r = radius * rng.gen_range(0.0f64..=1.0).sqrt();
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let x = group.center[0] + r * ang.cos();
                let z = group.center[1] + r * ang.sin();
                if z < cfg.z_min || z > cfg.z_min + cfg.area {
                    continue;
                }
                if x.abs() > x_limit(z, cfg, cam) {
                    continue;
                }
                let clear = placed.iter().all(|(_, p)| {
                    ((p[0] - x).powi(2) + (p[1] - z).powi(2)).sqrt() >= cfg.min_spacing
                });
                if clear {
                    placed.push((g, [x, z]));
                    break;
                }
            }
        }
    }
    Ok(placed)
}

struct RawPerson {
    group: usize,
    theta6: Vec<f64>,
    beta: [f64; BETA_DIM],
    trans: [f64; 3],
    joints3d: Vec<[f64; 3]>,
    joints2d: Vec<[f64; 2]>,
    box2d: [f64; 4],
}

fn build_person(
    rng: &mut ChaCha8Rng,
    group: &PlacedGroup,
    group_idx: usize,
    ground_xz: [f64; 2],
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
    skel: &Skeleton,
) -> Result<RawPerson> {
    let j = skel.num_joints();
    let mut beta = [0.0; BETA_DIM];
    beta[0] = normal(rng, 0.04);
    for b in beta.iter_mut().take(8).skip(1) {
        *b = normal(rng, 0.06);
    }

    let primitive = poses::primitive_pose(group.primitive, group.phase);
    let heading = group.heading + normal(rng, 0.15);
    let mut locals: Vec<Mat3> = Vec::with_capacity(j);
    for aa in primitive.iter().take(j) {
        let noise = [
            normal(rng, cfg.pose_noise),
            normal(rng, cfg.pose_noise),
            normal(rng, cfg.pose_noise),
        ];
        locals.push(mat3_mul(&axis_angle_mat(aa), &axis_angle_mat(&noise)));
    }

    // World-frame kinematics: heading turns the whole body about the
    // vertical axis, then the posed root is grounded on the lower ankle.
    let heading_rot = rotation_about_axis([0.0, 1.0, 0.0], heading);
    let mut world_rots = locals.clone();
    world_rots[skel.root] = mat3_mul(&heading_rot, &locals[skel.root]);
    let scales = bone_scales_from_beta(&beta, skel);
    let rel_world = fk_from_rotmats(&world_rots, &scales, skel);
    let foot_drop = rel_world[skel.left_ankle][1].max(rel_world[skel.right_ankle][1]);
    let root_world = [ground_xz[0], -foot_drop, ground_xz[1]];

    // Camera frame: rotate by the pitch about x after recentering on the
    // camera position.
    let pitch_rot = rotation_about_axis([1.0, 0.0, 0.0], cfg.cam_pitch);
    let cam_pos = [0.0, -cfg.cam_height, 0.0];
    let trans = mat3_vec(&pitch_rot, &[
        root_world[0] - cam_pos[0],
        root_world[1] - cam_pos[1],
        root_world[2] - cam_pos[2],
    ]);

    let mut cam_rots = world_rots;
    cam_rots[skel.root] = mat3_mul(&pitch_rot, &cam_rots[skel.root]);
    let mut theta6 = Vec::with_capacity(j * 6);
    for r in &cam_rots {
        theta6.extend_from_slice(&rot6d::rotmat_to_rot6d(r));
    }

    let rel_cam = fk_from_rotmats(&cam_rots, &scales, skel);
    let joints3d: Vec<[f64; 3]> = rel_cam
        .iter()
        .map(|p| [p[0] + trans[0], p[1] + trans[1], p[2] + trans[2]])
        .collect();
    let joints2d: Vec<[f64; 2]> = joints3d
        .iter()
        .map(|p| camera::project_point(p, cam))
        .collect::<Result<_>>()?;

    let mut bx = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in &joints2d {
        bx[0] = bx[0].min(p[0]);
        bx[1] = bx[1].min(p[1]);
        bx[2] = bx[2].max(p[0]);
        bx[3] = bx[3].max(p[1]);
    }

    Ok(RawPerson {
        group: group_idx,
        theta6,
        beta,
        trans,
        joints3d,
        joints2d,
        box2d: bx,
    })
}

fn apply_occlusion(rng: &mut ChaCha8Rng, persons: &[RawPerson], rate: f64) -> Vec<Vec<bool>> {
    let mut vis: Vec<Vec<bool>> = persons
        .iter()
        .map(|p| vec![true; p.joints2d.len()])
        .collect();
    for (p, person) in persons.iter().enumerate() {
        for (j, pt) in person.joints2d.iter().enumerate() {
            let mut hidden = false;
            for (o, other) in persons.iter().enumerate() {
                if o == p || other.trans[2] >= person.trans[2] - 0.25 {
                    continue;
                }
                let b = &other.box2d;
                if pt[0] >= b[0] && pt[0] <= b[2] && pt[1] >= b[1] && pt[1] <= b[3] {
                    hidden = true;
                    break;
                }
            }
            // One draw per joint regardless of the geometric outcome keeps
            // the random stream independent of scene layout.
            let dropped = rng.gen_range(0.0f64..1.0) < rate;
            vis[p][j] = !(hidden || dropped);
        }
    }
    vis
}

/// Generate one scene. Deterministic in `(cfg, cam, encoder, seed)`.
pub fn generate_scene(
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
    encoder: &Encoder,
    skel: &Skeleton,
    seed: u64,
    id: u64,
) -> Result<Scene> {
    cfg.validate()?;
    cam.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = place_groups(&mut rng, cfg, cam)?;
    let spots = place_members(&mut rng, &groups, cfg, cam)?;

    let mut raw = Vec::with_capacity(spots.len());
    for (g, xz) in &spots {
        raw.push(build_person(&mut rng, &groups[*g], *g, *xz, cfg, cam, skel)?);
    }
    let vis = apply_occlusion(&mut rng, &raw, cfg.occlusion_rate);

    let persons = raw
        .into_iter()
        .zip(vis)
        .map(|(p, v)| {
            let q = encoder.encode(&p.joints2d, &v, &p.box2d)?;
            Ok(Person {
                joints2d: p.joints2d,
                vis: v,
                box2d: p.box2d,
                q,
                group: p.group,
                gt: Some(PersonGt {
                    theta6: p.theta6,
                    beta: p.beta,
                    trans: p.trans,
                    joints3d: p.joints3d,
                }),
            })
        })
        .collect::<Result<Vec<Person>>>()?;

    Ok(Scene {
        id,
        persons,
        pseudo_gt: false,
    })
}

/// Generate `count` scenes with per-scene seeds derived from `seed`. The
/// feature encoder is seeded independently so datasets generated with
/// different scene seeds still share it.
pub fn generate_dataset(
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
    feature_dim: usize,
    encoder_seed: u64,
    skel: &Skeleton,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    let encoder = Encoder::new(feature_dim, skel.num_joints(), encoder_seed);
    let scenes = (0..count)
        .map(|i| {
            generate_scene(
                cfg,
                cam,
                &encoder,
                skel,
                mix_seed_n(seed, "scene", i as u64),
                i as u64,
            )
        })
        .collect::<Result<Vec<Scene>>>()?;
    Ok(Dataset::new(*cam, feature_dim, encoder_seed, scenes))
}

/// Up direction of the ground plane in the camera frame for the camera
/// described by `cfg`: the world up `-y` rotated by the pitch.
pub fn camera_frame_up(cfg: &SceneConfig) -> [f64; 3] {
    let pitch_rot = rotation_about_axis([1.0, 0.0, 0.0], cfg.cam_pitch);
    mat3_vec(&pitch_rot, &[0.0, -1.0, 0.0])
}
