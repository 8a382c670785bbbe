//! Named parameter storage.
//!
//! A [`ParamStore`] owns every learnable tensor in insertion order, which
//! fixes the layout the optimizer, checkpoints and gradient collection all
//! share. Binding a store to a tape inserts one gradient leaf per parameter
//! and remembers the mapping, so gradients found by `backward` can be read
//! back out by [`ParamId`].

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, V};
use crate::numerics::tensor::Tensor;

/// Index of a parameter inside its store. Stable across binds and steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, t: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Insert every parameter into the tape as a gradient leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Insert every parameter as a constant; forward-only evaluation.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Replace all tensors with those of `other`. Shapes must agree; used
    /// when resuming from a checkpoint.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Data(
                "checkpoint parameter names do not match the model".to_string(),
            ));
        }
        for (mine, theirs) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            if !mine.same_shape(theirs) {
                return Err(Error::Data(
                    "checkpoint parameter shapes do not match the model".to_string(),
                ));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }
}

/// Per-tape mapping from parameter ids to tape leaves.
pub struct Bound {
    vars: Vec<V>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> V {
        self.vars[id.0]
    }

    /// Collect gradients for every parameter, in store order. Parameters the
    /// output does not depend on get zero tensors.
    pub fn collect_grads(&self, store: &ParamStore, grads: &[Option<Tensor>]) -> Vec<Tensor> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| match &grads[v.0] {
                Some(g) => g.clone(),
                None => Tensor::zeros(store.tensor(ParamId(i)).shape()),
            })
            .collect()
    }

    /// True if `backward` propagated a gradient into this parameter's leaf.
    pub fn grad_reached(&self, id: ParamId, grads: &[Option<Tensor>]) -> bool {
        grads[self.vars[id.0].0].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::new();
        let a = store.register("w", Tensor::vector(vec![1.0, 2.0]));
        let b = store.register("b", Tensor::scalar(0.5));
        assert_eq!(store.len(), 2);
        assert_eq!(store.lookup("w"), Some(a));
        assert_eq!(store.lookup("b"), Some(b));
        assert_eq!(store.lookup("missing"), None);
        assert_eq!(store.num_scalars(), 3);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(1.0));
        store.register("w", Tensor::scalar(2.0));
    }

    #[test]
    fn bound_gradients_come_back_in_store_order() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::scalar(2.0));
        let b = store.register("b", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let (va, vb) = (bound.var(a), bound.var(b));
        let prod = tape.mul(va, vb);
        let grads = tape.backward(prod).unwrap();
        let collected = bound.collect_grads(&store, &grads);
        assert_eq!(collected[0].item(), 3.0);
        assert_eq!(collected[1].item(), 2.0);
    }

    #[test]
    fn unused_parameters_collect_zero_gradients() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::scalar(2.0));
        let _b = store.register("b", Tensor::vector(vec![1.0, 1.0]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let va = bound.var(a);
        let y = tape.mul(va, va);
        let grads = tape.backward(y).unwrap();
        let collected = bound.collect_grads(&store, &grads);
        assert_eq!(collected[1].data(), &[0.0, 0.0]);
    }
}
