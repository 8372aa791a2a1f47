//! Reverse-mode autodiff over a flat operation tape.
//!
//! Values are computed eagerly as nodes are inserted (define-by-run), so the
//! caller can read intermediate results (argmax for sampling, logits for beam
//! search) while building. `backward` replays the tape in reverse, producing
//! a gradient buffer per node; leaf nodes tagged with a [`ParamId`] are how
//! gradients reach the parameter store.
//!
//! The op set is exactly what the captioning network needs; this is not a
//! general computation-graph library.

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{concat as tensor_concat, split as tensor_split, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: VarId, b: VarId },
    Add { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Act { kind: Activation, x: VarId },
    SoftmaxT { x: VarId, tau: f64 },
    Concat { parts: Vec<VarId>, axis: usize },
    Narrow { x: VarId, start: usize, len: usize },
    Row { x: VarId, row: usize },
    WeightedSum { weights: VarId, items: Vec<VarId> },
    Dot { a: VarId, b: VarId },
    Scale { x: VarId, c: f64 },
    AddN { xs: Vec<VarId> },
    CrossEntropy { logits: VarId, target: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradient buffers produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: VarId) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four accumulators; f64 adds cannot be reordered by the
/// compiler, so the instruction-level parallelism has to be spelled out.
fn dot_ilp(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ai = a.chunks_exact(4);
    let mut bi = b.chunks_exact(4);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ai.remainder().iter().zip(bi.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Numerically stabilized softmax of `xs / tau` (max subtraction).
pub fn softmax_values(xs: &[f64], tau: f64) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| ((x - m) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// log(sum(exp(xs))) with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        debug_assert!(value.all_finite(), "non-finite node value from {op:?}");
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, Op::Leaf { param: None })
    }

    /// Insert a parameter as a leaf; its gradient is routed back to `id`
    /// by [`Graph::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> VarId {
        self.push(store.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    /// Matrix product. `a` is [m, k]; `b` is [k, n] or a [k] vector.
    /// Backward: dA = dC * B^T, dB = A^T * dC.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !av.is_matrix() {
            return Err(Error::Dim {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (bk, n, vec_rhs) = if bv.is_matrix() {
            (bv.shape()[0], bv.shape()[1], false)
        } else if bv.is_vector() {
            (bv.shape()[0], 1, true)
        } else {
            return Err(Error::Dim {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        if k != bk {
            return Err(Error::Dim {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (av.data(), bv.data());
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot_ilp(&ad[i * k..(i + 1) * k], bd);
            }
        } else {
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (l, &ail) in arow.iter().enumerate() {
                    if ail == 0.0 {
                        continue;
                    }
                    let brow = &bd[l * n..(l + 1) * n];
                    for (o, &blj) in orow.iter_mut().zip(brow) {
                        *o += ail * blj;
                    }
                }
            }
        }
        let shape = if vec_rhs { vec![m] } else { vec![m, n] };
        Ok(self.push(Tensor::from_vec(shape, out)?, Op::Matmul { a, b }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::Dim {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_vec(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add { a, b }))
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::Dim {
                op: "mul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::from_vec(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul { a, b }))
    }

    /// Entrywise activation. ReLU backward uses subgradient 0 at 0.
    pub fn act(&mut self, kind: Activation, x: VarId) -> VarId {
        let xv = &self.nodes[x.0].value;
        let data = xv
            .data()
            .iter()
            .map(|&v| match kind {
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => sigmoid(v),
                Activation::Relu => v.max(0.0),
            })
            .collect();
        let t = Tensor::from_vec(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(t, Op::Act { kind, x })
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        self.act(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        self.act(Activation::Sigmoid, x)
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        self.act(Activation::Relu, x)
    }

    /// Temperature softmax over a vector; stabilized by max subtraction.
    pub fn softmax_t(&mut self, x: VarId, tau: f64) -> Result<VarId> {
        if tau <= 0.0 {
            return Err(Error::Domain(format!(
                "softmax temperature must be positive, got {tau}"
            )));
        }
        let xv = &self.nodes[x.0].value;
        if !xv.is_vector() {
            return Err(Error::Dim {
                op: "softmax",
                lhs: xv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let y = softmax_values(xv.data(), tau);
        let t = Tensor::from_vec(vec![y.len()], y)?;
        Ok(self.push(t, Op::SoftmaxT { x, tau }))
    }

    pub fn softmax(&mut self, x: VarId) -> Result<VarId> {
        self.softmax_t(x, 1.0)
    }

    /// Concatenate along `axis`; backward splits the upstream gradient.
    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = tensor_concat(&tensors, axis)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Contiguous slice [start, start+len) of a vector.
    pub fn narrow(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId> {
        let xv = &self.nodes[x.0].value;
        if !xv.is_vector() || start + len > xv.len() {
            return Err(Error::Dim {
                op: "narrow",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let t = Tensor::from_vec(vec![len], xv.data()[start..start + len].to_vec())?;
        Ok(self.push(t, Op::Narrow { x, start, len }))
    }

    /// Gather one row of a matrix as a vector; backward scatters into the row.
    pub fn row(&mut self, x: VarId, row: usize) -> Result<VarId> {
        let xv = &self.nodes[x.0].value;
        if !xv.is_matrix() || row >= xv.rows() {
            return Err(Error::Dim {
                op: "row",
                lhs: xv.shape().to_vec(),
                rhs: vec![row],
            });
        }
        let t = Tensor::from_vec(vec![xv.cols()], xv.row(row).to_vec())?;
        Ok(self.push(t, Op::Row { x, row }))
    }

    /// Sum of `weights[i] * items[i]` over same-shape vector items.
    pub fn weighted_sum(&mut self, weights: VarId, items: &[VarId]) -> Result<VarId> {
        let wv = &self.nodes[weights.0].value;
        if !wv.is_vector() || wv.len() != items.len() || items.is_empty() {
            return Err(Error::Dim {
                op: "weighted_sum",
                lhs: wv.shape().to_vec(),
                rhs: vec![items.len()],
            });
        }
        let shape = self.nodes[items[0].0].value.shape().to_vec();
        let mut out = vec![0.0; shape.iter().product()];
        for (i, item) in items.iter().enumerate() {
            let iv = &self.nodes[item.0].value;
            if iv.shape() != shape.as_slice() {
                return Err(Error::Dim {
                    op: "weighted_sum",
                    lhs: shape,
                    rhs: iv.shape().to_vec(),
                });
            }
            let w = wv.data()[i];
            for (o, &x) in out.iter_mut().zip(iv.data()) {
                *o += w * x;
            }
        }
        let t = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            t,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// Inner product of two same-length vectors, as a [1] tensor.
    pub fn dot(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !av.is_vector() || av.shape() != bv.shape() {
            return Err(Error::Dim {
                op: "dot",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { a, b }))
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> VarId {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| v * c).collect();
        let t = Tensor::from_vec(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(t, Op::Scale { x, c })
    }

    /// Elementwise sum of any number of same-shape tensors.
    pub fn add_n(&mut self, xs: &[VarId]) -> Result<VarId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Domain("add_n of zero tensors".into()))?;
        let shape = self.nodes[first.0].value.shape().to_vec();
        let mut out = vec![0.0; shape.iter().product()];
        for x in xs {
            let xv = &self.nodes[x.0].value;
            if xv.shape() != shape.as_slice() {
                return Err(Error::Dim {
                    op: "add_n",
                    lhs: shape,
                    rhs: xv.shape().to_vec(),
                });
            }
            for (o, &v) in out.iter_mut().zip(xv.data()) {
                *o += v;
            }
        }
        let t = Tensor::from_vec(shape, out)?;
        Ok(self.push(t, Op::AddN { xs: xs.to_vec() }))
    }

    /// Cross-entropy of a logit vector against one target index:
    /// `logsumexp(logits) - logits[target]`, as a [1] tensor.
    /// Backward: d logits = softmax(logits) - onehot(target).
    pub fn cross_entropy(&mut self, logits: VarId, target: usize) -> Result<VarId> {
        let lv = &self.nodes[logits.0].value;
        if !lv.is_vector() || target >= lv.len() {
            return Err(Error::Dim {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![target],
            });
        }
        let loss = log_sum_exp(lv.data()) - lv.data()[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target }))
    }

    /// Reverse sweep from a scalar loss node. Returns per-node gradients.
    pub fn backward(&self, loss: VarId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Dim {
                op: "backward",
                lhs: self.nodes[loss.0].value.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(up) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &up, &mut grads);
            grads[i] = Some(up);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor>], v: VarId, delta: Tensor) {
        match &mut grads[v.0] {
            Some(g) => g.add_in_place(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Matmul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.is_matrix() { bv.shape()[1] } else { 1 };
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                if n == 1 {
                    // dA = up (outer) B, dB = A^T * up
                    for (r, &u) in up.data().iter().enumerate() {
                        let darow = &mut da[r * k..(r + 1) * k];
                        let arow = &av.data()[r * k..(r + 1) * k];
                        if u != 0.0 {
                            for ((dal, &bl), (dbl, &al)) in darow
                                .iter_mut()
                                .zip(bv.data())
                                .zip(db.iter_mut().zip(arow))
                            {
                                *dal = u * bl;
                                *dbl += u * al;
                            }
                        }
                    }
                } else {
                    // dA[i,l] = sum_j up[i,j] * B[l,j]
                    for r in 0..m {
                        let uprow = &up.data()[r * n..(r + 1) * n];
                        let darow = &mut da[r * k..(r + 1) * k];
                        for (l, dal) in darow.iter_mut().enumerate() {
                            let brow = &bv.data()[l * n..(l + 1) * n];
                            *dal += dot_ilp(uprow, brow);
                        }
                    }
                    // dB[l,j] = sum_i A[i,l] * up[i,j]
                    for r in 0..m {
                        let arow = &av.data()[r * k..(r + 1) * k];
                        let uprow = &up.data()[r * n..(r + 1) * n];
                        for (l, &ail) in arow.iter().enumerate() {
                            if ail == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[l * n..(l + 1) * n];
                            for (d, &u) in dbrow.iter_mut().zip(uprow) {
                                *d += ail * u;
                            }
                        }
                    }
                }
                Self::accumulate(grads, *a, Tensor::from_vec(vec![m, k], da).unwrap());
                Self::accumulate(
                    grads,
                    *b,
                    Tensor::from_vec(bv.shape().to_vec(), db).unwrap(),
                );
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, up.clone());
                Self::accumulate(grads, *b, up.clone());
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da = up
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(u, y)| u * y)
                    .collect();
                let db = up
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(u, x)| u * x)
                    .collect();
                Self::accumulate(grads, *a, Tensor::from_vec(av.shape().to_vec(), da).unwrap());
                Self::accumulate(grads, *b, Tensor::from_vec(bv.shape().to_vec(), db).unwrap());
            }
            Op::Act { kind, x } => {
                let yv = &self.nodes[i].value;
                let dx = up
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(u, &y)| match kind {
                        Activation::Tanh => u * (1.0 - y * y),
                        Activation::Sigmoid => u * y * (1.0 - y),
                        Activation::Relu => {
                            if y > 0.0 {
                                *u
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(yv.shape().to_vec(), dx).unwrap());
            }
            Op::SoftmaxT { x, tau } => {
                let yv = &self.nodes[i].value;
                let inner: f64 = up.data().iter().zip(yv.data()).map(|(u, y)| u * y).sum();
                let dx = up
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(u, y)| y * (u - inner) / tau)
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(yv.shape().to_vec(), dx).unwrap());
            }
            Op::Concat { parts, axis } => {
                let extents: Vec<usize> = parts
                    .iter()
                    .map(|p| self.nodes[p.0].value.shape()[*axis])
                    .collect();
                let pieces = tensor_split(up, *axis, &extents).expect("concat grad split");
                for (p, piece) in parts.iter().zip(pieces) {
                    Self::accumulate(grads, *p, piece);
                }
            }
            Op::Narrow { x, start, len } => {
                let xv = &self.nodes[x.0].value;
                let mut dx = vec![0.0; xv.len()];
                dx[*start..start + len].copy_from_slice(up.data());
                Self::accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), dx).unwrap());
            }
            Op::Row { x, row } => {
                let xv = &self.nodes[x.0].value;
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                dx.row_mut(*row).copy_from_slice(up.data());
                Self::accumulate(grads, *x, dx);
            }
            Op::WeightedSum { weights, items } => {
                let wv = &self.nodes[weights.0].value;
                let mut dw = vec![0.0; items.len()];
                for (idx, item) in items.iter().enumerate() {
                    let iv = &self.nodes[item.0].value;
                    dw[idx] = up.data().iter().zip(iv.data()).map(|(u, x)| u * x).sum();
                    let w = wv.data()[idx];
                    if w != 0.0 {
                        let di = up.data().iter().map(|u| u * w).collect();
                        Self::accumulate(
                            grads,
                            *item,
                            Tensor::from_vec(iv.shape().to_vec(), di).unwrap(),
                        );
                    }
                }
                Self::accumulate(
                    grads,
                    *weights,
                    Tensor::from_vec(vec![items.len()], dw).unwrap(),
                );
            }
            Op::Dot { a, b } => {
                let u = up.item();
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da = bv.data().iter().map(|y| u * y).collect();
                let db = av.data().iter().map(|x| u * x).collect();
                Self::accumulate(grads, *a, Tensor::from_vec(av.shape().to_vec(), da).unwrap());
                Self::accumulate(grads, *b, Tensor::from_vec(bv.shape().to_vec(), db).unwrap());
            }
            Op::Scale { x, c } => {
                let dx = up.data().iter().map(|u| u * c).collect();
                Self::accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(up.shape().to_vec(), dx).unwrap(),
                );
            }
            Op::AddN { xs } => {
                for x in xs {
                    Self::accumulate(grads, *x, up.clone());
                }
            }
            Op::CrossEntropy { logits, target } => {
                let u = up.item();
                let lv = &self.nodes[logits.0].value;
                let mut dl: Vec<f64> = softmax_values(lv.data(), 1.0)
                    .into_iter()
                    .map(|p| p * u)
                    .collect();
                dl[*target] -= u;
                Self::accumulate(
                    grads,
                    *logits,
                    Tensor::from_vec(lv.shape().to_vec(), dl).unwrap(),
                );
            }
        }
    }

    /// Route leaf gradients back into the parameter store. Frozen parameters
    /// keep an identically zero gradient.
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients,
        store: &mut ParamStore,
    ) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = grads.grads[i].as_ref() {
                    store.accumulate_grad(id, g)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` w.r.t. one entry of `x`.
    fn central_diff(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, idx: usize, eps: f64) -> f64 {
        let mut plus = x.clone();
        plus.data_mut()[idx] += eps;
        let mut minus = x.clone();
        minus.data_mut()[idx] -= eps;
        (f(&plus) - f(&minus)) / (2.0 * eps)
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    /// Check the VJP of a single-input op against finite differences at
    /// `points` random draws: the loss is a fixed random projection of the
    /// op output.
    fn check_unary_op(
        build: &dyn Fn(&mut Graph, VarId) -> VarId,
        shape: Vec<usize>,
        points: usize,
        tol: f64,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..points {
            let x = Tensor::rand_uniform(shape.clone(), -2.0, 2.0, &mut rng);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = build(&mut g, xv);
            let proj = Tensor::rand_uniform(self_shape(&g, y), -1.0, 1.0, &mut rng);
            let pv = g.constant(proj.clone());
            let loss = g.dot(y, pv).unwrap();
            let grads = g.backward(loss).unwrap();
            let analytic = grads.get(xv).expect("input grad present").clone();

            let mut f = |xt: &Tensor| {
                let mut g2 = Graph::new();
                let xv2 = g2.constant(xt.clone());
                let y2 = build(&mut g2, xv2);
                let pv2 = g2.constant(proj.clone());
                let l2 = g2.dot(y2, pv2).unwrap();
                g2.value(l2).item()
            };
            for idx in 0..x.len() {
                let n = central_diff(&mut f, &x, idx, 1e-5);
                assert!(
                    rel_err(analytic.data()[idx], n) < tol,
                    "grad mismatch at {idx}: analytic={} numeric={}",
                    analytic.data()[idx],
                    n
                );
            }
        }
    }

    fn self_shape(g: &Graph, v: VarId) -> Vec<usize> {
        g.value(v).shape().to_vec()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g
            .constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = g.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case_1x2_2x1() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = Tensor::rand_uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(vec![4, 2], -1.0, 1.0, &mut rng);
        let proj = Tensor::rand_uniform(vec![6], -1.0, 1.0, &mut rng);

        // loss = <A*B, proj>, realized via an elementwise mask and row sums
        let mut g = Graph::new();
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let c = g.matmul(av, bv).unwrap();
        let pv = g.constant(Tensor::from_vec(vec![3, 2], proj.data().to_vec()).unwrap());
        let masked = g.mul(c, pv).unwrap();
        let rows: Vec<VarId> = (0..3).map(|r| g.row(masked, r).unwrap()).collect();
        let flat = g.concat(&rows, 0).unwrap();
        let ones = g.constant(Tensor::full(vec![6], 1.0));
        let loss = g.dot(flat, ones).unwrap();
        let grads = g.backward(loss).unwrap();
        let da = grads.get(av).unwrap().clone();
        let db = grads.get(bv).unwrap().clone();

        let f = |at: &Tensor, bt: &Tensor| -> f64 {
            let mut g = Graph::new();
            let av = g.constant(at.clone());
            let bv = g.constant(bt.clone());
            let c = g.matmul(av, bv).unwrap();
            g.value(c)
                .data()
                .iter()
                .zip(proj.data())
                .map(|(x, p)| x * p)
                .sum()
        };
        for idx in 0..a.len() {
            let mut plus = a.clone();
            plus.data_mut()[idx] += 1e-5;
            let mut minus = a.clone();
            minus.data_mut()[idx] -= 1e-5;
            let n = (f(&plus, &b) - f(&minus, &b)) / 2e-5;
            assert!(rel_err(da.data()[idx], n) < 1e-6);
        }
        for idx in 0..b.len() {
            let mut plus = b.clone();
            plus.data_mut()[idx] += 1e-5;
            let mut minus = b.clone();
            minus.data_mut()[idx] -= 1e-5;
            let n = (f(&a, &plus) - f(&a, &minus)) / 2e-5;
            assert!(rel_err(db.data()[idx], n) < 1e-6);
        }
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![3], vec![0.7, 0.7, 0.7]).unwrap());
        let y = g.softmax_t(x, 1.0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_huge_temperature_flattens() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let y = g.softmax_t(x, 1e6).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![2], vec![0.0, 3.0f64.ln()]).unwrap());
        let y = g.softmax_t(x, 1.0).unwrap();
        assert!((g.value(y).data()[0] - 0.25).abs() < 1e-12);
        assert!((g.value(y).data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_nonpositive_tau() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![2], vec![0.0, 1.0]).unwrap());
        assert!(g.softmax_t(x, 0.0).is_err());
        assert!(g.softmax_t(x, -1.0).is_err());
    }

    #[test]
    fn softmax_simplex_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.random_range(1..=12);
            let x = Tensor::rand_uniform(vec![n], -50.0, 50.0, &mut rng);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let y = g.softmax_t(xv, rng.random_range(0.1..=10.0)).unwrap();
            let data = g.value(y).data();
            assert!(data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((data.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn tanh_backward_matches_finite_differences_at_0_3() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1], vec![0.3]).unwrap());
        let y = g.tanh(x);
        let grads = g.backward(y).unwrap();
        let analytic = grads.get(x).unwrap().item();
        let eps = 1e-6;
        let numeric = ((0.3f64 + eps).tanh() - (0.3f64 - eps).tanh()) / (2.0 * eps);
        assert!(rel_err(analytic, numeric) < 1e-7);
    }

    #[test]
    fn unary_op_vjps_match_finite_differences() {
        check_unary_op(&|g, x| g.tanh(x), vec![5], 10, 1e-6, 11);
        check_unary_op(&|g, x| g.sigmoid(x), vec![5], 10, 1e-6, 12);
        check_unary_op(&|g, x| g.relu(x), vec![5], 10, 1e-6, 13);
        check_unary_op(&|g, x| g.softmax_t(x, 0.7).unwrap(), vec![5], 10, 1e-6, 14);
        check_unary_op(&|g, x| g.narrow(x, 1, 3).unwrap(), vec![5], 10, 1e-6, 15);
        check_unary_op(&|g, x| g.scale(x, -1.7), vec![5], 10, 1e-6, 16);
        check_unary_op(
            &|g, x| {
                let t = g.tanh(x);
                g.cross_entropy(t, 2).unwrap()
            },
            vec![5],
            10,
            1e-6,
            17,
        );
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![3], vec![3.0, 4.0, 5.0]).unwrap());
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = g.constant(Tensor::from_vec(vec![5], vec![10.0, 20.0, 30.0, 40.0, 50.0]).unwrap());
        let loss = g.dot(c, w).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[30.0, 40.0, 50.0]);
    }

    #[test]
    fn concat_of_300d_halves_is_600d() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![300]));
        let b = g.constant(Tensor::zeros(vec![300]));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(c).shape(), &[600]);
    }

    #[test]
    fn weighted_sum_and_row_vjps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // weighted_sum: perturb weights and items, compare against finite differences
        let w = Tensor::rand_uniform(vec![3], -1.0, 1.0, &mut rng);
        let items: Vec<Tensor> = (0..3)
            .map(|_| Tensor::rand_uniform(vec![4], -1.0, 1.0, &mut rng))
            .collect();
        let proj = Tensor::rand_uniform(vec![4], -1.0, 1.0, &mut rng);

        let eval = |wt: &Tensor, its: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            let wv = g.constant(wt.clone());
            let ivs: Vec<VarId> = its.iter().map(|t| g.constant(t.clone())).collect();
            let y = g.weighted_sum(wv, &ivs).unwrap();
            g.value(y)
                .data()
                .iter()
                .zip(proj.data())
                .map(|(x, p)| x * p)
                .sum()
        };

        let mut g = Graph::new();
        let wv = g.constant(w.clone());
        let ivs: Vec<VarId> = items.iter().map(|t| g.constant(t.clone())).collect();
        let y = g.weighted_sum(wv, &ivs).unwrap();
        let pv = g.constant(proj.clone());
        let loss = g.dot(y, pv).unwrap();
        let grads = g.backward(loss).unwrap();

        for idx in 0..w.len() {
            let mut plus = w.clone();
            plus.data_mut()[idx] += 1e-5;
            let mut minus = w.clone();
            minus.data_mut()[idx] -= 1e-5;
            let n = (eval(&plus, &items) - eval(&minus, &items)) / 2e-5;
            assert!(rel_err(grads.get(wv).unwrap().data()[idx], n) < 1e-6);
        }
        for (k, item) in items.iter().enumerate() {
            for idx in 0..item.len() {
                let mut plus = items.clone();
                plus[k].data_mut()[idx] += 1e-5;
                let mut minus = items.clone();
                minus[k].data_mut()[idx] -= 1e-5;
                let n = (eval(&w, &plus) - eval(&w, &minus)) / 2e-5;
                assert!(rel_err(grads.get(ivs[k]).unwrap().data()[idx], n) < 1e-6);
            }
        }

        // row gather: gradient lands in the gathered row only
        let m = Tensor::rand_uniform(vec![3, 2], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let mv = g.constant(m);
        let r = g.row(mv, 1).unwrap();
        let p = g.constant(Tensor::from_vec(vec![2], vec![5.0, 7.0]).unwrap());
        let loss = g.dot(r, p).unwrap();
        let grads = g.backward(loss).unwrap();
        let dm = grads.get(mv).unwrap();
        assert_eq!(dm.data(), &[0.0, 0.0, 5.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn purity_identical_inputs_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = Tensor::rand_uniform(vec![4, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(vec![4], -1.0, 1.0, &mut rng);
        let run = || -> Vec<f64> {
            let mut g = Graph::new();
            let av = g.constant(a.clone());
            let bv = g.constant(b.clone());
            let c = g.matmul(av, bv).unwrap();
            let d = g.tanh(c);
            let e = g.softmax_t(d, 0.9).unwrap();
            g.value(e).data().to_vec()
        };
        let x = run();
        let y = run();
        assert_eq!(x, y, "identical inputs must be bitwise identical");
    }
}

