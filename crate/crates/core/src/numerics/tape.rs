//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation eagerly computes its value and records itself as a node
//! referencing earlier nodes, so insertion order is already a topological
//! order. `backward` seeds a scalar output with gradient 1 and sweeps the
//! tape in reverse, accumulating gradients into every node that was reached.
//!
//! Handles ([`V`]) are plain indices and are only valid for the tape that
//! produced them. Shape misuse panics; gradient extraction and seeding
//! return [`Error`](crate::error::Error) values.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct V(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf { grad: bool },
    Add(V, V),
    Sub(V, V),
    Mul(V, V),
    Neg(V),
    AddConst(V),
    MulConst(V, f64),
    /// Broadcast multiply of a shape-`[1]` scalar node with a tensor node.
    ScalarMul(V, V),
    Recip(V),
    MatMul(V, V),
    MatVec(V, V),
    Sum(V),
    Relu(V),
    Sigmoid(V),
    Softplus(V),
    Exp(V),
    Sqrt(V),
    Slice(V, usize, usize),
    Concat(Vec<V>),
    Reshape(V),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerically stable logistic function.
pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: V) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn item(&self, v: V) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> V {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?} at node {}",
            op,
            self.nodes.len()
        );
        self.nodes.push(Node { value, op });
        V(self.nodes.len() - 1)
    }

    /// Leaf that participates in gradient computation.
    pub fn leaf(&mut self, value: Tensor) -> V {
        self.push(value, Op::Leaf { grad: true })
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> V {
        self.push(value, Op::Leaf { grad: false })
    }

    pub fn constant_scalar(&mut self, x: f64) -> V {
        self.constant(Tensor::scalar(x))
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> V {
        self.constant(Tensor::vector(data))
    }

    pub fn add(&mut self, a: V, b: V) -> V {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.same_shape(tb),
            "add shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: V, b: V) -> V {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.same_shape(tb),
            "sub shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: V, b: V) -> V {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.same_shape(tb),
            "mul shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| -x).collect()).unwrap();
        self.push(t, Op::Neg(a))
    }

    pub fn add_const(&mut self, a: V, c: f64) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x + c).collect()).unwrap();
        self.push(t, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: V, c: f64) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect()).unwrap();
        self.push(t, Op::MulConst(a, c))
    }

    /// `s * a` where `s` is a shape-`[1]` node broadcast over `a`.
    pub fn scalar_mul(&mut self, s: V, a: V) -> V {
        let sv = self.nodes[s.0].value.item();
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| sv * x).collect()).unwrap();
        self.push(t, Op::ScalarMul(s, a))
    }

    pub fn recip(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| 1.0 / x).collect()).unwrap();
        self.push(t, Op::Recip(a))
    }

    /// Matrix product of rank-2 tensors `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: V, b: V) -> V {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(),
            "matmul shape mismatch {:?} x {:?}",
            ta.shape(),
            tb.shape()
        );
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = ta.data()[i * k + p];
                for j in 0..m {
                    out[i * m + j] += aip * tb.data()[p * m + j];
                }
            }
        }
        self.push(Tensor::matrix(n, m, out).unwrap(), Op::MatMul(a, b))
    }

    /// Matrix-vector product `[n,k] x [k] -> [n]`.
    pub fn matvec(&mut self, m: V, x: V) -> V {
        let (tm, tx) = (&self.nodes[m.0].value, &self.nodes[x.0].value);
        assert!(
            tm.rank() == 2 && tx.rank() == 1 && tm.cols() == tx.len(),
            "matvec shape mismatch {:?} x {:?}",
            tm.shape(),
            tx.shape()
        );
        let (n, k) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; n];
        for (o, row) in out.iter_mut().zip(tm.data().chunks_exact(k)) {
            *o = row.iter().zip(tx.data()).map(|(a, b)| a * b).sum();
        }
        self.push(Tensor::vector(out), Op::MatVec(m, x))
    }

    /// Sum of all elements, scalar output.
    pub fn sum(&mut self, a: V) -> V {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn relu(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x.max(0.0)).collect(),
        )
        .unwrap();
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| sigmoid_f64(*x)).collect(),
        )
        .unwrap();
        self.push(t, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| softplus_f64(*x)).collect(),
        )
        .unwrap();
        self.push(t, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.exp()).collect()).unwrap();
        self.push(t, Op::Exp(a))
    }

    /// Element-wise square root. The derivative at exactly zero is taken as
    /// zero so losses that bottom out at zero do not poison the backward
    /// sweep with infinities.
    pub fn sqrt(&mut self, a: V) -> V {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.sqrt()).collect()).unwrap();
        self.push(t, Op::Sqrt(a))
    }

    /// Contiguous sub-range of a rank-1 tensor.
    pub fn slice(&mut self, a: V, start: usize, len: usize) -> V {
        let ta = &self.nodes[a.0].value;
        assert!(
            ta.rank() == 1 && start + len <= ta.len(),
            "slice [{start}, {start}+{len}) out of range for shape {:?}",
            ta.shape()
        );
        let t = Tensor::vector(ta.data()[start..start + len].to_vec());
        self.push(t, Op::Slice(a, start, len))
    }

    /// Concatenation of rank-1 tensors.
    pub fn concat(&mut self, parts: &[V]) -> V {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let mut data = Vec::new();
        for p in parts {
            let tp = &self.nodes[p.0].value;
            assert!(tp.rank() == 1, "concat expects rank-1 parts, got {:?}", tp.shape());
            data.extend_from_slice(tp.data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: V, shape: &[usize]) -> V {
        let ta = &self.nodes[a.0].value;
        assert!(
            shape.iter().product::<usize>() == ta.len(),
            "reshape {:?} -> {:?} changes element count",
            ta.shape(),
            shape
        );
        let t = Tensor::new(shape.to_vec(), ta.data().to_vec()).unwrap();
        self.push(t, Op::Reshape(a))
    }

    // Composite helpers.

    pub fn dot(&mut self, a: V, b: V) -> V {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn sq_norm(&mut self, a: V) -> V {
        self.dot(a, a)
    }

    pub fn norm(&mut self, a: V) -> V {
        let s = self.sq_norm(a);
        self.sqrt(s)
    }

    pub fn mean(&mut self, a: V) -> V {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.mul_const(s, 1.0 / n as f64)
    }

    /// Left-fold sum of several same-shape nodes.
    pub fn add_n(&mut self, parts: &[V]) -> V {
        assert!(!parts.is_empty(), "add_n of zero tensors");
        let mut acc = parts[0];
        for p in &parts[1..] {
            acc = self.add(acc, *p);
        }
        acc
    }

    /// Cross product of two length-3 vectors.
    pub fn cross3(&mut self, a: V, b: V) -> V {
        assert!(self.value(a).len() == 3 && self.value(b).len() == 3, "cross3 needs length-3 inputs");
        let (ax, ay, az) = (self.slice(a, 0, 1), self.slice(a, 1, 1), self.slice(a, 2, 1));
        let (bx, by, bz) = (self.slice(b, 0, 1), self.slice(b, 1, 1), self.slice(b, 2, 1));
        let aybz = self.mul(ay, bz);
        let azby = self.mul(az, by);
        let cx = self.sub(aybz, azby);
        let azbx = self.mul(az, bx);
        let axbz = self.mul(ax, bz);
        let cy = self.sub(azbx, axbz);
        let axby = self.mul(ax, by);
        let aybx = self.mul(ay, bx);
        let cz = self.sub(axby, aybx);
        self.concat(&[cx, cy, cz])
    }

    /// Reverse sweep from a scalar output. Returns one gradient slot per
    /// node; `None` marks nodes the output does not depend on.
    pub fn backward(&self, out: V) -> Result<Vec<Option<Tensor>>> {
        let out_t = &self.nodes[out.0].value;
        if out_t.len() != 1 {
            return Err(Error::Numerics(format!(
                "backward seed must be scalar, got shape {:?}",
                out_t.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));

        for i in (0..=out.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.all_finite() {
                return Err(Error::Numerics(format!(
                    "non-finite gradient at node {i} ({:?})",
                    self.nodes[i].op
                )));
            }
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut reached_grad_leaf = false;
        for (i, n) in self.nodes.iter().enumerate() {
            if let Op::Leaf { grad: true } = n.op {
                if grads[i].is_some() {
                    reached_grad_leaf = true;
                    break;
                }
            }
        }
        if !reached_grad_leaf {
            return Err(Error::Numerics(
                "backward output is detached from every gradient leaf".to_string(),
            ));
        }
        Ok(grads)
    }

    fn accumulate_parents(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], id: V, delta: Tensor| {
            match &mut grads[id.0] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |id: V| &self.nodes[id.0].value;

        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                let neg = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect()).unwrap();
                acc(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                )
                .unwrap();
                let db = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                )
                .unwrap();
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Neg(a) => {
                let da = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect()).unwrap();
                acc(grads, *a, da);
            }
            Op::AddConst(a) => acc(grads, *a, g.clone()),
            Op::MulConst(a, c) => {
                let da = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| x * c).collect()).unwrap();
                acc(grads, *a, da);
            }
            Op::ScalarMul(s, a) => {
                let sv = val(*s).item();
                let ta = val(*a);
                let ds: f64 = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).sum();
                let da = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| x * sv).collect()).unwrap();
                acc(grads, *s, Tensor::scalar(ds));
                acc(grads, *a, da);
            }
            Op::Recip(a) => {
                let out = &self.nodes[i].value;
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(x, o)| -x * o * o)
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, da);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = vec![0.0; n * k];
                let mut db = vec![0.0; k * m];
                for i2 in 0..n {
                    for j in 0..m {
                        let gij = g.data()[i2 * m + j];
                        for p in 0..k {
                            da[i2 * k + p] += gij * tb.data()[p * m + j];
                            db[p * m + j] += gij * ta.data()[i2 * k + p];
                        }
                    }
                }
                acc(grads, *a, Tensor::matrix(n, k, da).unwrap());
                acc(grads, *b, Tensor::matrix(k, m, db).unwrap());
            }
            Op::MatVec(m, x) => {
                let (tm, tx) = (val(*m), val(*x));
                let (n, k) = (tm.rows(), tm.cols());
                let mut dm = vec![0.0; n * k];
                let mut dx = vec![0.0; k];
                for i2 in 0..n {
                    let gi = g.data()[i2];
                    for p in 0..k {
                        dm[i2 * k + p] += gi * tx.data()[p];
                        dx[p] += gi * tm.data()[i2 * k + p];
                    }
                }
                acc(grads, *m, Tensor::matrix(n, k, dm).unwrap());
                acc(grads, *x, Tensor::vector(dx));
            }
            Op::Sum(a) => {
                let ta = val(*a);
                let gv = g.item();
                acc(
                    grads,
                    *a,
                    Tensor::new(ta.shape().to_vec(), vec![gv; ta.len()]).unwrap(),
                );
            }
            Op::Relu(a) => {
                let ta = val(*a);
                let da = Tensor::new(
                    ta.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[i].value;
                let da = Tensor::new(
                    out.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(x, o)| x * o * (1.0 - o))
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, da);
            }
            Op::Softplus(a) => {
                let ta = val(*a);
                let da = Tensor::new(
                    ta.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(x, v)| x * sigmoid_f64(*v))
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, da);
            }
            Op::Exp(a) => {
                let out = &self.nodes[i].value;
                let da = Tensor::new(
                    out.shape().to_vec(),
                    g.data().iter().zip(out.data()).map(|(x, o)| x * o).collect(),
                )
                .unwrap();
                acc(grads, *a, da);
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value;
                let da = Tensor::new(
                    out.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(x, o)| if *o == 0.0 { 0.0 } else { x * 0.5 / o })
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, da);
            }
            Op::Slice(a, start, len) => {
                let ta = val(*a);
                let mut da = vec![0.0; ta.len()];
                da[*start..*start + *len].copy_from_slice(g.data());
                acc(grads, *a, Tensor::vector(da));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let plen = val(*p).len();
                    acc(grads, *p, Tensor::vector(g.data()[off..off + plen].to_vec()));
                    off += plen;
                }
            }
            Op::Reshape(a) => {
                let ta = val(*a);
                acc(
                    grads,
                    *a,
                    Tensor::new(ta.shape().to_vec(), g.data().to_vec()).unwrap(),
                );
            }
        }
    }
}
