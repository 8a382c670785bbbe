//! Multilayer perceptron over tape values.
//!
//! Hidden layers use ReLU; the output layer is identity or sigmoid. Weights
//! and biases are registered in a [`ParamStore`] under `<prefix>.w<i>` /
//! `<prefix>.b<i>` and initialized uniformly in `[-1/sqrt(fan_in),
//! +1/sqrt(fan_in)]` from a seed derived from the prefix, so adding or
//! reordering other models never changes this one's initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::params::{Bound, ParamId, ParamStore};
use crate::numerics::tape::{Tape, V};
use crate::numerics::tensor::Tensor;
use crate::util::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Clone, Copy)]
struct Layer {
    w: ParamId,
    b: ParamId,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    out_act: OutputActivation,
}

impl Mlp {
    /// Build an MLP with the given layer dimensions, e.g. `[35, 64, 1]` for
    /// one 64-wide hidden layer. `dims` must list at least input and output.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        out_act: OutputActivation,
        seed: u64,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        assert!(dims.iter().all(|d| *d > 0), "mlp dims must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, prefix));
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w_data: Vec<f64> = (0..fan_out * fan_in)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            let b_data: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            let w = store.register(
                &format!("{prefix}.w{i}"),
                Tensor::matrix(fan_out, fan_in, w_data).unwrap(),
            );
            let b = store.register(&format!("{prefix}.b{i}"), Tensor::vector(b_data));
            layers.push(Layer {
                w,
                b,
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        Mlp { layers, out_act }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Ids of every parameter tensor, weights and biases interleaved.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    /// Forward pass on a rank-1 input.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: V) -> Result<V> {
        let got = tape.value(x).len();
        if tape.value(x).rank() != 1 || got != self.in_dim() {
            return Err(Error::Degenerate(format!(
                "mlp input has {} elements, expected {}",
                got,
                self.in_dim()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let wx = tape.matvec(bound.var(layer.w), h);
            h = tape.add(wx, bound.var(layer.b));
            if i < last {
                h = tape.relu(h);
            } else if self.out_act == OutputActivation::Sigmoid {
                h = tape.sigmoid(h);
            }
        }
        Ok(h)
    }

    /// Overwrite the output-layer bias. Used to pin initial predictions.
    pub fn set_output_bias(&self, store: &mut ParamStore, bias: &[f64]) {
        let last = self.layers[self.layers.len() - 1];
        assert!(bias.len() == last.out_dim, "bias length mismatch");
        *store.tensor_mut(last.b) = Tensor::vector(bias.to_vec());
    }

    /// Set the output-layer bias so a zero input maps exactly to `target`,
    /// absorbing whatever the randomly initialized hidden layers emit for
    /// zeros. Identity output activation only.
    pub fn calibrate_output_bias(&self, store: &mut ParamStore, target: &[f64]) {
        assert!(self.out_act == OutputActivation::Identity, "identity output only");
        let last = self.layers[self.layers.len() - 1];
        assert!(target.len() == last.out_dim, "target length mismatch");
        let mut h = vec![0.0; self.in_dim()];
        for layer in &self.layers[..self.layers.len() - 1] {
            let w = store.tensor(layer.w);
            let b = store.tensor(layer.b);
            let mut next = vec![0.0; layer.out_dim];
            for (r, wrow) in w.data().chunks_exact(layer.in_dim).enumerate() {
                let mut acc = b.data()[r];
                for (wv, hv) in wrow.iter().zip(&h) {
                    acc += wv * hv;
                }
                next[r] = acc.max(0.0);
            }
            h = next;
        }
        let w = store.tensor(last.w);
        let mut bias = target.to_vec();
        for (r, wrow) in w.data().chunks_exact(last.in_dim).enumerate() {
            for (wv, hv) in wrow.iter().zip(&h) {
                bias[r] -= wv * hv;
            }
        }
        *store.tensor_mut(last.b) = Tensor::vector(bias);
    }
}
