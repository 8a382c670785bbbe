//! Group inference: feature affinity and multiscale hyperedge construction.
//!
//! Each person contributes a descriptor `v = [q, b]` (appearance/pose code
//! plus encoded box). Pairwise cosine affinities feed a greedy
//! dense-submatrix search: for every anchor person, grow a size-K member set
//! by repeatedly adding the node with the largest total absolute affinity to
//! the current set. One hyperedge per anchor, so every scale has exactly N
//! hyperedges; duplicates are kept. Group selection is a discrete decision
//! made on input values only, so nothing here touches the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-person grouping descriptor.
#[derive(Clone, Debug)]
pub struct IndividualFeature {
    /// Pose/appearance code (dimension `m`).
    pub q: Vec<f64>,
    /// Focal-normalized box encoding.
    pub b: [f64; 3],
}

impl IndividualFeature {
    /// Concatenated descriptor `[q, b]`.
    pub fn v(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.q.len() + 3);
        out.extend_from_slice(&self.q);
        out.extend_from_slice(&self.b);
        out
    }
}

/// Build descriptors, checking that all codes share one dimension.
pub fn build_features(qs: &[Vec<f64>], boxes: &[[f64; 3]]) -> Result<Vec<IndividualFeature>> {
    if qs.len() != boxes.len() {
        return Err(Error::Degenerate(format!(
            "{} feature codes for {} boxes",
            qs.len(),
            boxes.len()
        )));
    }
    if qs.is_empty() {
        return Err(Error::Degenerate("no persons to group".to_string()));
    }
    let m = qs[0].len();
    if m == 0 {
        return Err(Error::Degenerate("empty feature codes".to_string()));
    }
    if qs.iter().any(|q| q.len() != m) {
        return Err(Error::Degenerate("feature codes have mixed dimensions".to_string()));
    }
    Ok(qs
        .iter()
        .zip(boxes)
        .map(|(q, b)| IndividualFeature { q: q.clone(), b: *b })
        .collect())
}

/// Symmetric N x N affinity matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffinityMatrix {
    n: usize,
    a: Vec<f64>,
}

impl AffinityMatrix {
    pub fn from_rows(n: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Degenerate(format!(
                "affinity data has {} entries for n = {n}",
                a.len()
            )));
        }
        Ok(AffinityMatrix { n, a })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }
}

/// Cosine affinities between descriptors. A zero-norm descriptor has zero
/// affinity with everything, its own diagonal included; other diagonals are
/// exactly 1, and all entries land in [-1, 1].
pub fn cosine_affinity(features: &[IndividualFeature]) -> AffinityMatrix {
    let n = features.len();
    let vs: Vec<Vec<f64>> = features.iter().map(|f| f.v()).collect();
    let norms: Vec<f64> = vs
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let value = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(x, y)| x * y).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            a[i * n + j] = value;
            a[j * n + i] = value;
        }
    }
    AffinityMatrix { n, a }
}

/// One hyperedge per anchor: the anchor plus its single best partner by raw
/// affinity (ties to the lowest index). With a single node the edge
/// degenerates to a singleton.
pub fn infer_pairwise(a: &AffinityMatrix) -> Vec<Vec<usize>> {
    let n = a.n();
    (0..n)
        .map(|i| {
            if n < 2 {
                return vec![i];
            }
            let mut best = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if a.get(i, j) > best_score {
                    best_score = a.get(i, j);
                    best = j;
                }
            }
            let mut edge = vec![i, best];
            edge.sort_unstable();
            edge
        })
        .collect()
}

/// Greedy dense-submatrix search: one hyperedge per anchor, grown to K
/// members by repeatedly adding the node with the largest summed absolute
/// affinity to the current members (ties to the lowest index). K is clamped
/// to N; K = 1 yields singletons.
pub fn infer_groups_greedy(a: &AffinityMatrix, k: usize) -> Vec<Vec<usize>> {
    assert!(k >= 1, "group size must be at least 1");
    let n = a.n();
    let k = k.min(n);
    (0..n)
        .map(|anchor| {
            let mut members = vec![anchor];
            let mut in_set = vec![false; n];
            in_set[anchor] = true;
            for _ in 1..k {
                let mut best = usize::MAX;
                let mut best_score = f64::NEG_INFINITY;
                for (u, taken) in in_set.iter().enumerate() {
                    if *taken {
                        continue;
                    }
                    let score: f64 = members.iter().map(|w| a.get(u, *w).abs()).sum();
                    if score > best_score {
                        best_score = score;
                        best = u;
                    }
                }
                in_set[best] = true;
                members.push(best);
            }
            members.sort_unstable();
            members
        })
        .collect()
}

/// Total absolute affinity of the submatrix selected by `members`,
/// diagonal included. The quantity the greedy search approximately
/// maximizes; exposed for oracles and diagnostics.
pub fn submatrix_mass(a: &AffinityMatrix, members: &[usize]) -> f64 {
    let mut total = 0.0;
    for &u in members {
        for &w in members {
            total += a.get(u, w).abs();
        }
    }
    total
}

/// Hyperedges of one scale. `edges[i]` is anchored at node `i`; member lists
/// are sorted and duplicates across anchors are retained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypergraphScale {
    pub k: usize,
    pub edges: Vec<Vec<usize>>,
}

impl HypergraphScale {
    /// Dense node x hyperedge incidence matrix (row-major, N x N since
    /// there is one edge per anchor).
    pub fn incidence(&self) -> Vec<f64> {
        let n = self.edges.len();
        let mut h = vec![0.0; n * n];
        for (e, members) in self.edges.iter().enumerate() {
            for &v in members {
                h[v * n + e] = 1.0;
            }
        }
        h
    }

    /// Indices of hyperedges containing `node`.
    pub fn incident_edges(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, members)| members.contains(&node))
            .map(|(e, _)| e)
            .collect()
    }
}

/// Hyperedge structure at every configured scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiscaleHypergraph {
    pub n: usize,
    pub scales: Vec<HypergraphScale>,
}

/// Build one scale per entry of `k_list`. K = 1 gives singletons, K = 2
/// uses best-partner pairing, larger K the greedy dense-submatrix search.
pub fn build_multiscale(a: &AffinityMatrix, k_list: &[usize]) -> Result<MultiscaleHypergraph> {
    if k_list.is_empty() {
        return Err(Error::Config("scale list is empty".to_string()));
    }
    if k_list.contains(&0) {
        return Err(Error::Config("scale sizes must be positive".to_string()));
    }
    if a.n() == 0 {
        return Err(Error::Degenerate("cannot group zero persons".to_string()));
    }
    let scales = k_list
        .iter()
        .map(|&k| {
            let edges = if k == 2 {
                infer_pairwise(a)
            } else {
                infer_groups_greedy(a, k)
            };
            HypergraphScale { k, edges }
        })
        .collect();
    Ok(MultiscaleHypergraph { n: a.n(), scales })
}

impl MultiscaleHypergraph {
    /// Serialize the topology for debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("hypergraph serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(q: &[f64]) -> IndividualFeature {
        IndividualFeature {
            q: q.to_vec(),
            b: [0.0, 0.0, 0.0],
        }
    }

    /// Exhaustive oracle: best completion of an anchored hyperedge by
    /// enumerating every (K-1)-subset of the other nodes.
    fn exhaustive_best_mass(a: &AffinityMatrix, anchor: usize, k: usize) -> f64 {
        fn recurse(
            a: &AffinityMatrix,
            members: &mut Vec<usize>,
            start: usize,
            left: usize,
            anchor: usize,
            best: &mut f64,
        ) {
            if left == 0 {
                *best = best.max(submatrix_mass(a, members));
                return;
            }
            for u in start..a.n() {
                if u == anchor {
                    continue;
                }
                members.push(u);
                recurse(a, members, u + 1, left - 1, anchor, best);
                members.pop();
            }
        }
        let mut best = f64::NEG_INFINITY;
        recurse(a, &mut vec![anchor], 0, k - 1, anchor, &mut best);
        best
    }

    #[test]
    fn cosine_of_known_vectors() {
        let feats = vec![feature(&[1.0, 0.0]), feature(&[1.0, 1.0])];
        let a = cosine_affinity(&feats);
        assert!((a.get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(0, 1), a.get(1, 0));
    }

    #[test]
    fn zero_descriptor_has_zero_affinity_everywhere() {
        let feats = vec![feature(&[0.0, 0.0]), feature(&[1.0, 2.0])];
        let a = cosine_affinity(&feats);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(1, 1), 1.0);
    }

    #[test]
    fn box_encoding_participates_in_the_descriptor() {
        let mut f1 = feature(&[1.0, 0.0]);
        let mut f2 = feature(&[1.0, 0.0]);
        f1.b = [0.5, 0.0, 0.1];
        f2.b = [-0.5, 0.0, 0.1];
        let a = cosine_affinity(&[f1, f2]);
        assert!(a.get(0, 1) < 1.0);
    }

    #[test]
    fn pairwise_picks_row_argmax() {
        // Affinities: 0-1 strong, 2 prefers 1.
        let a = AffinityMatrix::from_rows(
            3,
            vec![1.0, 0.9, 0.1, 0.9, 1.0, 0.2, 0.1, 0.2, 1.0],
        )
        .unwrap();
        let edges = infer_pairwise(&a);
        assert_eq!(edges, vec![vec![0, 1], vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn pairwise_single_node_degenerates_to_singleton() {
        let a = AffinityMatrix::from_rows(1, vec![1.0]).unwrap();
        assert_eq!(infer_pairwise(&a), vec![vec![0]]);
    }

    #[test]
    fn greedy_k1_yields_singletons_and_k_clamps_to_n() {
        let a = AffinityMatrix::from_rows(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert_eq!(infer_groups_greedy(&a, 1), vec![vec![0], vec![1]]);
        assert_eq!(infer_groups_greedy(&a, 5), vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn greedy_recovers_planted_blocks() {
        // Two dense blocks {0,1,2} and {3,4,5}: 0.9 within, 0.05 across.
        let n = 6;
        let mut data = vec![0.05; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        for block in [[0usize, 1, 2], [3, 4, 5]] {
            for &i in &block {
                for &j in &block {
                    if i != j {
                        data[i * n + j] = 0.9;
                    }
                }
            }
        }
        let a = AffinityMatrix::from_rows(n, data).unwrap();
        let edges = infer_groups_greedy(&a, 3);
        assert_eq!(edges[0], vec![0, 1, 2]);
        assert_eq!(edges[4], vec![3, 4, 5]);
        // And the greedy mass matches the exhaustive optimum on every anchor.
        for (anchor, edge) in edges.iter().enumerate() {
            let greedy = submatrix_mass(&a, edge);
            let best = exhaustive_best_mass(&a, anchor, 3);
            assert!((greedy - best).abs() < 1e-12, "anchor {anchor}: {greedy} < {best}");
        }
    }

    #[test]
    fn greedy_ties_break_to_the_lowest_index() {
        // Nodes 1 and 2 are equally attractive to anchor 0.
        let a = AffinityMatrix::from_rows(
            3,
            vec![1.0, 0.5, 0.5, 0.5, 1.0, 0.0, 0.5, 0.0, 1.0],
        )
        .unwrap();
        let edges = infer_groups_greedy(&a, 2);
        assert_eq!(edges[0], vec![0, 1]);
    }

    #[test]
    fn greedy_uses_absolute_affinities() {
        // Node 2 has strongly negative affinity to 0; |.| makes it the
        // preferred partner over the weakly positive node 1.
        let a = AffinityMatrix::from_rows(
            3,
            vec![1.0, 0.3, -0.9, 0.3, 1.0, 0.0, -0.9, 0.0, 1.0],
        )
        .unwrap();
        let edges = infer_groups_greedy(&a, 2);
        assert_eq!(edges[0], vec![0, 2]);
    }

    #[test]
    fn multiscale_builds_n_edges_per_scale_with_anchor_membership() {
        let feats: Vec<IndividualFeature> = (0..5)
            .map(|i| feature(&[(i as f64).cos(), (i as f64).sin(), 1.0]))
            .collect();
        let a = cosine_affinity(&feats);
        let g = build_multiscale(&a, &[1, 3, 5]).unwrap();
        assert_eq!(g.scales.len(), 3);
        for scale in &g.scales {
            assert_eq!(scale.edges.len(), 5);
            for (anchor, edge) in scale.edges.iter().enumerate() {
                assert!(edge.contains(&anchor), "anchor {anchor} missing from its edge");
                assert_eq!(edge.len(), scale.k.min(5));
            }
        }
        // Scale k=1 is all singletons.
        assert!(g.scales[0].edges.iter().enumerate().all(|(i, e)| e == &vec![i]));
    }

    #[test]
    fn incidence_matrix_marks_membership() {
        let scale = HypergraphScale {
            k: 2,
            edges: vec![vec![0, 1], vec![1, 2], vec![0, 2]],
        };
        let h = scale.incidence();
        // Row = node, column = edge.
        assert_eq!(h, vec![1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(scale.incident_edges(1), vec![0, 1]);
    }

    #[test]
    fn hypergraph_json_dump_contains_edges() {
        let a = AffinityMatrix::from_rows(2, vec![1.0, 0.4, 0.4, 1.0]).unwrap();
        let g = build_multiscale(&a, &[2]).unwrap();
        let json = g.to_json();
        assert!(json.contains("\"edges\":[[0,1],[0,1]]"), "{json}");
    }

    #[test]
    fn empty_scale_list_is_rejected() {
        let a = AffinityMatrix::from_rows(2, vec![1.0, 0.4, 0.4, 1.0]).unwrap();
        assert!(build_multiscale(&a, &[]).is_err());
        assert!(build_multiscale(&a, &[0]).is_err());
    }

    #[test]
    fn permuting_persons_permutes_greedy_groups() {
        // Relabeling nodes by a permutation relabels the inferred groups the
        // same way (affinities here have no ties).
        let feats: Vec<IndividualFeature> = (0..6)
            .map(|i| {
                let t = i as f64 * 0.7 + 0.1;
                feature(&[t.cos(), t.sin(), (t * 1.3).cos()])
            })
            .collect();
        let a = cosine_affinity(&feats);
        let edges = infer_groups_greedy(&a, 3);

        // Reverse permutation: p(i) = 5 - i.
        let p = |i: usize| 5 - i;
        let permuted: Vec<IndividualFeature> = (0..6).map(|i| feats[p(i)].clone()).collect();
        let a2 = cosine_affinity(&permuted);
        let edges2 = infer_groups_greedy(&a2, 3);
        for anchor in 0..6 {
            let mut mapped: Vec<usize> = edges[p(anchor)].iter().map(|&v| p(v)).collect();
            mapped.sort_unstable();
            assert_eq!(edges2[anchor], mapped, "anchor {anchor}");
        }
    }
}
