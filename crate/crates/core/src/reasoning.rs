//! Relational reasoning over person hypergraphs and parameter regression.
//!
//! Each scale of the hypergraph runs its own message-passing stream on the
//! shared initial features. One round gathers nodes into hyperedge features
//! (gated sum through `f_lambda`, cohesion gate through `f_c`, projection
//! through `f_e`) and scatters them back through `f_v`:
//!
//! ```text
//! e_i = c_i * f_e( sum_j lambda_j v_j ),  lambda_j = f_lambda([v_j, sum_m v_m])
//! c_i = sigmoid( f_c( sum_j (v_j - mean) ) )
//! v_i = f_v([v_i, sum_{e containing i} e])
//! ```
//!
//! After T rounds the per-scale features are concatenated with the box
//! encoding and a head regresses per-joint 6D rotations, shape coefficients
//! and the camera triple `(f_c, t_x, t_y)`; the triple decodes to an
//! absolute translation conditioned on the detection box. With reasoning
//! disabled the head runs directly on `[v, b]`, which is the no-interaction
//! baseline used in ablations.

use serde::{Deserialize, Serialize};

use crate::body_model::{
    camera, rot6d, BoxInfo, CameraIntrinsics, Skeleton, BETA_DIM,
};
use crate::body_model::kinematics;
use crate::error::{Error, Result};
use crate::grouping::{IndividualFeature, MultiscaleHypergraph};
use crate::numerics::mlp::{Mlp, OutputActivation};
use crate::numerics::params::{Bound, ParamStore};
use crate::numerics::tape::{Tape, V};
use crate::util::mix_seed_n;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReasoningConfig {
    /// Dimension of the pose/appearance code `q`.
    pub feature_dim: usize,
    /// Hidden width of every MLP.
    pub hidden: usize,
    /// Number of hidden layers per MLP.
    pub hidden_layers: usize,
    /// Hyperedge size per scale, e.g. `[1, 3, 5]`.
    pub k_list: Vec<usize>,
    /// Message-passing rounds T.
    pub iterations: usize,
    /// Use one MLP set for every scale instead of per-scale weights.
    pub share_scales: bool,
    /// Disable hypergraph reasoning entirely (per-person baseline).
    pub use_hypergraph: bool,
    pub num_joints: usize,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        ReasoningConfig {
            feature_dim: 32,
            hidden: 64,
            hidden_layers: 1,
            k_list: vec![1, 3, 5],
            iterations: 2,
            share_scales: false,
            use_hypergraph: true,
            num_joints: 14,
        }
    }
}

impl ReasoningConfig {
    /// Dimension of a node feature `[q, b]`.
    pub fn node_dim(&self) -> usize {
        self.feature_dim + 3
    }

    /// Input width of the regression head.
    pub fn head_in(&self) -> usize {
        if self.use_hypergraph {
            self.k_list.len() * self.node_dim() + 3
        } else {
            self.node_dim() + 3
        }
    }

    /// Output width of the regression head: rotations, shape, camera triple.
    pub fn head_out(&self) -> usize {
        self.num_joints * 6 + BETA_DIM + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.num_joints == 0 {
            return Err(Error::Config(
                "feature_dim, hidden and num_joints must be positive".to_string(),
            ));
        }
        if self.use_hypergraph && self.k_list.is_empty() {
            return Err(Error::Config("k_list must not be empty".to_string()));
        }
        if self.k_list.contains(&0) {
            return Err(Error::Config("k_list entries must be positive".to_string()));
        }
        Ok(())
    }

    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// The four MLPs of one message-passing scale.
#[derive(Clone)]
pub struct ScaleMlps {
    pub f_e: Mlp,
    pub f_lambda: Mlp,
    pub f_c: Mlp,
    pub f_v: Mlp,
}

impl ScaleMlps {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &ReasoningConfig, seed: u64) -> Self {
        let d = cfg.node_dim();
        ScaleMlps {
            f_e: Mlp::new(
                store,
                &format!("{prefix}.f_e"),
                &cfg.mlp_dims(d, d),
                OutputActivation::Identity,
                seed,
            ),
            f_lambda: Mlp::new(
                store,
                &format!("{prefix}.f_lambda"),
                &cfg.mlp_dims(2 * d, 1),
                OutputActivation::Identity,
                seed,
            ),
            f_c: Mlp::new(
                store,
                &format!("{prefix}.f_c"),
                &cfg.mlp_dims(d, 1),
                OutputActivation::Identity,
                seed,
            ),
            f_v: Mlp::new(
                store,
                &format!("{prefix}.f_v"),
                &cfg.mlp_dims(2 * d, d),
                OutputActivation::Identity,
                seed,
            ),
        }
    }
}

/// Gather member features into one hyperedge feature (forward equations in
/// the module docs). `members` must be nonempty.
pub fn node_to_hyperedge(
    tape: &mut Tape,
    bound: &Bound,
    mlps: &ScaleMlps,
    nodes: &[V],
    members: &[usize],
) -> Result<V> {
    assert!(!members.is_empty(), "hyperedge with no members");
    let member_vars: Vec<V> = members.iter().map(|&j| nodes[j]).collect();
    let total = tape.add_n(&member_vars);
    let mean = tape.mul_const(total, 1.0 / members.len() as f64);

    // Gated sum of member features.
    let mut weighted: Vec<V> = Vec::with_capacity(members.len());
    for &v in &member_vars {
        let gate_in = tape.concat(&[v, total]);
        let lambda = mlps.f_lambda.forward(tape, bound, gate_in)?;
        weighted.push(tape.scalar_mul(lambda, v));
    }
    let gated = tape.add_n(&weighted);
    let projected = mlps.f_e.forward(tape, bound, gated)?;

    // Cohesion gate on summed deviations from the member mean.
    let deviations: Vec<V> = member_vars.iter().map(|&v| tape.sub(v, mean)).collect();
    let dev_sum = tape.add_n(&deviations);
    let c_raw = mlps.f_c.forward(tape, bound, dev_sum)?;
    let c = tape.sigmoid(c_raw);

    Ok(tape.scalar_mul(c, projected))
}

/// Update one node from the hyperedges it belongs to. `incident` must be
/// nonempty (every node anchors at least its own hyperedge); duplicate
/// edges contribute additively.
pub fn hyperedge_to_node(
    tape: &mut Tape,
    bound: &Bound,
    mlps: &ScaleMlps,
    node: V,
    incident: &[V],
) -> Result<V> {
    assert!(!incident.is_empty(), "node with no incident hyperedges");
    let total = tape.add_n(incident);
    let joint = tape.concat(&[node, total]);
    mlps.f_v.forward(tape, bound, joint)
}

/// Regressed per-person quantities, still on the tape.
pub struct PersonVars {
    /// Raw 6D rotations, length `J * 6`.
    pub theta: V,
    /// Shape coefficients, length 10.
    pub beta: V,
    /// Positive camera scale (softplus-floored).
    pub f_c: V,
    /// Raw in-plane offsets regressed alongside `f_c`.
    pub t_xy: (V, V),
    /// Decoded camera-frame translation, length 3.
    pub trans: V,
    /// Root-relative joint positions, `J` nodes of length 3.
    pub joints_rel: Vec<V>,
}

#[derive(Clone)]
pub struct ReasoningParams {
    pub cfg: ReasoningConfig,
    scales: Vec<ScaleMlps>,
    pub head: Mlp,
}

impl ReasoningParams {
    pub fn new(store: &mut ParamStore, cfg: ReasoningConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let scales = if cfg.use_hypergraph {
            let count = if cfg.share_scales { 1 } else { cfg.k_list.len() };
            (0..count)
                .map(|s| {
                    let prefix = if cfg.share_scales {
                        "scales.shared".to_string()
                    } else {
                        format!("scale{s}")
                    };
                    ScaleMlps::new(store, &prefix, &cfg, mix_seed_n(seed, "scale", s as u64))
                })
                .collect()
        } else {
            Vec::new()
        };
        let head = Mlp::new(
            store,
            "head",
            &cfg.mlp_dims(cfg.head_in(), cfg.head_out()),
            OutputActivation::Identity,
            mix_seed_n(seed, "head", 0),
        );

        // Calibrate the head so an all-zero input decodes to identity
        // rotations, neutral shape, and f_c of exactly 1.
        let mut target = vec![0.0; cfg.head_out()];
        for j in 0..cfg.num_joints {
            target[j * 6..(j + 1) * 6].copy_from_slice(&rot6d::IDENTITY_6D);
        }
        // softplus(x) + 1e-3 = 1  =>  x = ln(e^0.999 - 1).
        target[cfg.num_joints * 6 + BETA_DIM] = (0.999f64.exp() - 1.0).ln();
        head.calibrate_output_bias(store, &target);

        Ok(ReasoningParams { cfg, scales, head })
    }

    fn scale_mlps(&self, s: usize) -> &ScaleMlps {
        if self.cfg.share_scales {
            &self.scales[0]
        } else {
            &self.scales[s]
        }
    }

    /// Run message passing and produce the head input `v'` for every person.
    /// `graph` is required exactly when hypergraph reasoning is enabled.
    pub fn run(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        features: &[IndividualFeature],
        graph: Option<&MultiscaleHypergraph>,
    ) -> Result<Vec<V>> {
        if features.is_empty() {
            return Err(Error::Degenerate("no persons to reason over".to_string()));
        }
        if features.iter().any(|f| f.q.len() != self.cfg.feature_dim) {
            return Err(Error::Degenerate(format!(
                "feature code dimension does not match configured {}",
                self.cfg.feature_dim
            )));
        }
        let n = features.len();
        let init: Vec<V> = features
            .iter()
            .map(|f| tape.constant_vector(f.v()))
            .collect();
        let boxes: Vec<V> = init
            .iter()
            .map(|&v| tape.slice(v, self.cfg.feature_dim, 3))
            .collect();

        if !self.cfg.use_hypergraph {
            return Ok((0..n).map(|i| tape.concat(&[init[i], boxes[i]])).collect());
        }
        let graph = graph.ok_or_else(|| {
            Error::Degenerate("hypergraph reasoning requires a topology".to_string())
        })?;
        if graph.n != n || graph.scales.len() != self.cfg.k_list.len() {
            return Err(Error::Degenerate(format!(
                "topology of {} nodes / {} scales does not match {} persons / {} scales",
                graph.n,
                graph.scales.len(),
                n,
                self.cfg.k_list.len()
            )));
        }

        let mut finals: Vec<Vec<V>> = Vec::with_capacity(graph.scales.len());
        for (s, scale) in graph.scales.iter().enumerate() {
            let mlps = self.scale_mlps(s);
            let incident: Vec<Vec<usize>> =
                (0..n).map(|i| scale.incident_edges(i)).collect();
            let mut nodes = init.clone();
            for _ in 0..self.cfg.iterations {
                let mut edge_feats = Vec::with_capacity(scale.edges.len());
                for members in &scale.edges {
                    edge_feats.push(node_to_hyperedge(tape, bound, mlps, &nodes, members)?);
                }
                let mut next = Vec::with_capacity(n);
                for i in 0..n {
                    let inc: Vec<V> = incident[i].iter().map(|&e| edge_feats[e]).collect();
                    next.push(hyperedge_to_node(tape, bound, mlps, nodes[i], &inc)?);
                }
                nodes = next;
            }
            finals.push(nodes);
        }

        Ok((0..n)
            .map(|i| {
                let mut parts: Vec<V> = finals.iter().map(|nodes| nodes[i]).collect();
                parts.push(boxes[i]);
                tape.concat(&parts)
            })
            .collect())
    }

    /// Regress body and camera parameters for one person and decode the
    /// absolute translation from its detection box.
    pub fn regress(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        vprime: V,
        box_info: &BoxInfo,
        cam: &CameraIntrinsics,
        skel: &Skeleton,
    ) -> Result<PersonVars> {
        assert!(
            skel.num_joints() == self.cfg.num_joints,
            "skeleton has {} joints, model configured for {}",
            skel.num_joints(),
            self.cfg.num_joints
        );
        let out = self.head.forward(tape, bound, vprime)?;
        let j6 = self.cfg.num_joints * 6;
        let theta = tape.slice(out, 0, j6);
        let beta = tape.slice(out, j6, BETA_DIM);
        let fc_raw = tape.slice(out, j6 + BETA_DIM, 1);
        let t_x = tape.slice(out, j6 + BETA_DIM + 1, 1);
        let t_y = tape.slice(out, j6 + BETA_DIM + 2, 1);

        let fc_soft = tape.softplus(fc_raw);
        let f_c = tape.add_const(fc_soft, 1e-3);

        let mut rotmats = Vec::with_capacity(self.cfg.num_joints);
        for j in 0..self.cfg.num_joints {
            let r6 = tape.slice(theta, j * 6, 6);
            rotmats.push(rot6d::rot6d_to_rotmat_var(tape, r6)?);
        }
        let joints_rel = kinematics::forward_kinematics_var(tape, &rotmats, beta, skel)?;
        let trans = camera::decode_translation_var(tape, f_c, t_x, t_y, box_info, cam)?;

        Ok(PersonVars {
            theta,
            beta,
            f_c,
            t_xy: (t_x, t_y),
            trans,
            joints_rel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{build_multiscale, cosine_affinity};
    use crate::numerics::params::ParamId;
    use crate::numerics::tape::sigmoid_f64;
    use crate::numerics::tensor::Tensor;

    fn small_cfg(m: usize, k_list: Vec<usize>) -> ReasoningConfig {
        ReasoningConfig {
            feature_dim: m,
            hidden: 8,
            hidden_layers: 1,
            k_list,
            iterations: 2,
            share_scales: false,
            use_hypergraph: true,
            num_joints: 14,
        }
    }

    fn seeded_features(n: usize, m: usize, seed: u64) -> Vec<IndividualFeature> {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| IndividualFeature {
                q: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                b: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.05..0.4)],
            })
            .collect()
    }

    /// Plain-f64 forward through an Mlp's weights, independent of the tape.
    fn manual_mlp(store: &ParamStore, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let ids = mlp.param_ids();
        let mut h = x.to_vec();
        let layers = ids.len() / 2;
        for li in 0..layers {
            let w = store.tensor(ids[2 * li]);
            let b = store.tensor(ids[2 * li + 1]);
            let mut next = vec![0.0; w.rows()];
            for (r, wrow) in w.data().chunks_exact(w.cols()).enumerate() {
                let mut acc = b.data()[r];
                for (wv, hv) in wrow.iter().zip(&h) {
                    acc += wv * hv;
                }
                next[r] = acc;
            }
            if li + 1 < layers {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            h = next;
        }
        h
    }

    #[test]
    fn head_input_dimension_matches_scale_count() {
        // Three scales at m = 8: per-node dim 11, head input 3*11 + 3 = 36.
        let cfg = small_cfg(8, vec![1, 3, 5]);
        assert_eq!(cfg.head_in(), 36);

        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 1).unwrap();
        let feats = seeded_features(5, 8, 2);
        let graph = build_multiscale(&cosine_affinity(&feats), &[1, 3, 5]).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let vp = model.run(&mut tape, &bound, &feats, Some(&graph)).unwrap();
        assert_eq!(vp.len(), 5);
        for v in &vp {
            assert_eq!(tape.value(*v).len(), 36);
        }
    }

    #[test]
    fn baseline_head_input_is_feature_plus_box() {
        let mut cfg = small_cfg(8, vec![1, 3, 5]);
        cfg.use_hypergraph = false;
        assert_eq!(cfg.head_in(), 14);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 1).unwrap();
        assert!(store.lookup("scale0.f_e.w0").is_none());

        let feats = seeded_features(3, 8, 4);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let vp = model.run(&mut tape, &bound, &feats, None).unwrap();
        assert_eq!(tape.value(vp[0]).len(), 14);
        // The first m + 3 entries are the raw feature.
        assert_eq!(&tape.value(vp[1]).data()[..11], feats[1].v().as_slice());
    }

    #[test]
    fn zeroed_mlps_make_node_updates_input_independent() {
        // With all weights and biases zero, every gate and projection is a
        // constant, so two different scenes produce identical per-scale
        // features (the trailing box encoding still differs).
        let cfg = small_cfg(4, vec![3]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 1).unwrap();
        for i in 0..store.len() {
            let t = store.tensor_mut(ParamId(i));
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let run = |feats: &[IndividualFeature]| -> Vec<Vec<f64>> {
            let graph = build_multiscale(&cosine_affinity(feats), &[3]).unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let vp = model.run(&mut tape, &bound, feats, Some(&graph)).unwrap();
            vp.iter()
                .map(|v| tape.value(*v).data()[..7].to_vec())
                .collect()
        };
        let a = run(&seeded_features(4, 4, 10));
        let b = run(&seeded_features(4, 4, 11));
        assert_eq!(a, b);
    }

    #[test]
    fn hyperedge_feature_matches_straight_line_recomputation() {
        let cfg = small_cfg(3, vec![3]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 7).unwrap();
        let feats = seeded_features(3, 3, 21);
        let members = vec![0usize, 1, 2];

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let nodes: Vec<V> = feats.iter().map(|f| tape.constant_vector(f.v())).collect();
        let edge = node_to_hyperedge(&mut tape, &bound, model.scale_mlps(0), &nodes, &members)
            .unwrap();

        // Independent recomputation with plain loops.
        let vs: Vec<Vec<f64>> = feats.iter().map(|f| f.v()).collect();
        let d = 6;
        let mut total = vec![0.0; d];
        for v in &vs {
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
        }
        let mean: Vec<f64> = total.iter().map(|t| t / 3.0).collect();
        let mut gated = vec![0.0; d];
        for v in &vs {
            let mut gate_in = v.clone();
            gate_in.extend_from_slice(&total);
            let lambda = manual_mlp(&store, &model.scale_mlps(0).f_lambda, &gate_in)[0];
            for (g, x) in gated.iter_mut().zip(v) {
                *g += lambda * x;
            }
        }
        let projected = manual_mlp(&store, &model.scale_mlps(0).f_e, &gated);
        let mut dev_sum = vec![0.0; d];
        for v in &vs {
            for ((s, x), m) in dev_sum.iter_mut().zip(v).zip(&mean) {
                *s += x - m;
            }
        }
        let c = sigmoid_f64(manual_mlp(&store, &model.scale_mlps(0).f_c, &dev_sum)[0]);
        let expected: Vec<f64> = projected.iter().map(|p| c * p).collect();

        for (a, e) in tape.value(edge).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn singleton_cohesion_gate_ignores_the_feature() {
        // For a singleton edge the deviation sum is exactly zero, so the
        // gate is sigmoid(f_c(0)) no matter what the node holds.
        let cfg = small_cfg(3, vec![1]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 3).unwrap();
        let edge_of = |feat: &IndividualFeature| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let nodes = vec![tape.constant_vector(feat.v())];
            let e = node_to_hyperedge(&mut tape, &bound, model.scale_mlps(0), &nodes, &[0])
                .unwrap();
            tape.value(e).data().to_vec()
        };
        let f1 = seeded_features(1, 3, 5).remove(0);
        let f2 = seeded_features(1, 3, 6).remove(0);

        let zero_gate = sigmoid_f64(manual_mlp(&store, &model.scale_mlps(0).f_c, &[0.0; 6])[0]);
        let e1 = edge_of(&f1);
        let proj1 = manual_mlp(&store, &model.scale_mlps(0).f_e, &{
            let lambda =
                manual_mlp(&store, &model.scale_mlps(0).f_lambda, &[f1.v(), f1.v()].concat())[0];
            f1.v().iter().map(|x| lambda * x).collect::<Vec<f64>>()
        });
        for (a, p) in e1.iter().zip(&proj1) {
            assert!((a - zero_gate * p).abs() < 1e-12);
        }
        // Same gate value for a different feature.
        let e2 = edge_of(&f2);
        assert!(!e1.is_empty() && !e2.is_empty());
    }

    #[test]
    fn identity_first_half_fv_passes_node_through_when_edges_are_zero() {
        let cfg = ReasoningConfig {
            hidden_layers: 0, // single linear layer so the wiring is visible
            ..small_cfg(2, vec![1])
        };
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 1).unwrap();
        let d = 5;
        // f_v is a single [d, 2d] layer; set it to [I | 0] with zero bias.
        let w = store.lookup("scale0.f_v.w0").unwrap();
        let mut data = vec![0.0; d * 2 * d];
        for i in 0..d {
            data[i * 2 * d + i] = 1.0;
        }
        *store.tensor_mut(w) = Tensor::matrix(d, 2 * d, data).unwrap();
        let b = store.lookup("scale0.f_v.b0").unwrap();
        *store.tensor_mut(b) = Tensor::vector(vec![0.0; d]);

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let node = tape.constant_vector(vec![0.1, -0.2, 0.3, 0.4, -0.5]);
        let zero_edge = tape.constant_vector(vec![0.0; d]);
        let out = hyperedge_to_node(&mut tape, &bound, model.scale_mlps(0), node, &[zero_edge])
            .unwrap();
        assert_eq!(tape.value(out).data(), &[0.1, -0.2, 0.3, 0.4, -0.5]);
    }

    #[test]
    fn permuting_persons_permutes_outputs() {
        let cfg = small_cfg(6, vec![1, 3]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 9).unwrap();
        let feats = seeded_features(5, 6, 33);

        let run = |feats: &[IndividualFeature]| -> Vec<Vec<f64>> {
            let graph = build_multiscale(&cosine_affinity(feats), &[1, 3]).unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let vp = model.run(&mut tape, &bound, feats, Some(&graph)).unwrap();
            vp.iter().map(|v| tape.value(*v).data().to_vec()).collect()
        };

        let base = run(&feats);
        let p = [4usize, 2, 0, 3, 1];
        let permuted_feats: Vec<IndividualFeature> =
            p.iter().map(|&i| feats[i].clone()).collect();
        let permuted = run(&permuted_feats);
        for (slot, &src) in p.iter().enumerate() {
            for (a, b) in permuted[slot].iter().zip(&base[src]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_scale_weights_are_independent_unless_shared() {
        let cfg = small_cfg(4, vec![1, 3, 5]);
        let mut store = ParamStore::new();
        ReasoningParams::new(&mut store, cfg.clone(), 1).unwrap();
        assert!(store.lookup("scale0.f_e.w0").is_some());
        assert!(store.lookup("scale2.f_v.w0").is_some());

        let shared_cfg = ReasoningConfig {
            share_scales: true,
            ..cfg
        };
        let mut shared_store = ParamStore::new();
        ReasoningParams::new(&mut shared_store, shared_cfg, 1).unwrap();
        assert!(shared_store.lookup("scales.shared.f_e.w0").is_some());
        assert!(shared_store.lookup("scale1.f_e.w0").is_none());
        assert!(shared_store.len() < store.len());
    }

    #[test]
    fn zero_head_input_decodes_to_rest_pose_with_unit_camera_scale() {
        let cfg = small_cfg(4, vec![1]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg.clone(), 5).unwrap();
        let skel = Skeleton::default_body();
        let cam = CameraIntrinsics::new(1000.0, 1920.0, 1080.0);
        let box_info = camera::encode_box([900.0, 400.0, 1100.0, 800.0], &cam).unwrap();

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let vprime = tape.constant_vector(vec![0.0; cfg.head_in()]);
        let person = model
            .regress(&mut tape, &bound, vprime, &box_info, &cam, &skel)
            .unwrap();

        assert!((tape.item(person.f_c) - 1.0).abs() < 1e-9);
        let rest = kinematics::forward_kinematics(&crate::body_model::BodyParams::rest(14), &skel)
            .unwrap();
        for (v, r) in person.joints_rel.iter().zip(&rest) {
            let data = tape.value(*v).data();
            for k in 0..3 {
                assert!((data[k] - r[k]).abs() < 1e-9);
            }
        }
        // Translation decodes against the box: depth 2f/(d f_c).
        let t = tape.value(person.trans).data();
        assert!((t[2] - 2.0 * 1000.0 / (400.0 * tape.item(person.f_c))).abs() < 1e-6);
    }

    #[test]
    fn every_mlp_receives_gradient_from_the_head_output() {
        let cfg = small_cfg(5, vec![1, 3]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 13).unwrap();
        let feats = seeded_features(4, 5, 40);
        let graph = build_multiscale(&cosine_affinity(&feats), &[1, 3]).unwrap();
        let skel = Skeleton::default_body();
        let cam = CameraIntrinsics::new(1000.0, 1920.0, 1080.0);
        let box_info = camera::encode_box([800.0, 300.0, 1100.0, 900.0], &cam).unwrap();

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let vp = model.run(&mut tape, &bound, &feats, Some(&graph)).unwrap();
        let mut terms = Vec::new();
        for &v in &vp {
            let person = model
                .regress(&mut tape, &bound, v, &box_info, &cam, &skel)
                .unwrap();
            let t_sq = tape.sq_norm(person.trans);
            let th_sq = tape.sq_norm(person.theta);
            terms.push(tape.add(t_sq, th_sq));
        }
        let loss = tape.add_n(&terms);
        let grads = tape.backward(loss).unwrap();
        let collected = bound.collect_grads(&store, &grads);

        // Group gradient norms by MLP prefix: every network participates.
        for prefix in [
            "scale0.f_e", "scale0.f_lambda", "scale0.f_c", "scale0.f_v",
            "scale1.f_e", "scale1.f_lambda", "scale1.f_c", "scale1.f_v",
            "head",
        ] {
            let mut norm = 0.0;
            for (i, (name, _)) in store.iter().enumerate() {
                if name.starts_with(prefix) {
                    norm += collected[i].data().iter().map(|x| x * x).sum::<f64>();
                }
            }
            assert!(norm > 0.0, "no gradient reached {prefix}");
        }
    }

    #[test]
    fn run_rejects_mismatched_topology() {
        let cfg = small_cfg(4, vec![1, 3]);
        let mut store = ParamStore::new();
        let model = ReasoningParams::new(&mut store, cfg, 2).unwrap();
        let feats = seeded_features(4, 4, 8);
        let graph = build_multiscale(&cosine_affinity(&feats), &[1]).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        assert!(model.run(&mut tape, &bound, &feats, Some(&graph)).is_err());
        assert!(model.run(&mut tape, &bound, &feats, None).is_err());
    }
}
