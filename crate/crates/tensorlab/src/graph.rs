use std::sync::Arc;

use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::{Result, TensorError};

/// Label value excluded from the cross-entropy average.
pub const IGNORE_INDEX: usize = usize::MAX;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Keep-mask for masked softmax. `true` keeps a position, `false` forces its
/// post-softmax weight to exactly 0. Shared cheaply between ops.
#[derive(Debug, Clone)]
pub struct Mask {
    keep: Arc<Vec<bool>>,
}

impl Mask {
    pub fn new(keep: Vec<bool>) -> Self {
        Mask {
            keep: Arc::new(keep),
        }
    }

    /// Lower-triangular n x n mask: position (i, j) kept iff j <= i.
    pub fn causal(n: usize) -> Self {
        let mut keep = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                keep[i * n + j] = true;
            }
        }
        Mask::new(keep)
    }

    /// Broadcast a per-column keep vector over `rows` rows.
    pub fn cols(keep_cols: &[bool], rows: usize) -> Self {
        let mut keep = Vec::with_capacity(rows * keep_cols.len());
        for _ in 0..rows {
            keep.extend_from_slice(keep_cols);
        }
        Mask::new(keep)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { slot: usize },
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Affine {
        a: NodeId,
        mul: f64,
        #[allow(dead_code)] // zero gradient; kept for the op record
        shift: f64,
    },
    Mul { a: NodeId, b: NodeId },
    MulCol { col: NodeId, a: NodeId },
    ScaleCols { a: NodeId, w: NodeId },
    SoftmaxRows {
        a: NodeId,
        #[allow(dead_code)] // masked outputs are exact zeros, so backward needs no mask
        mask: Option<Mask>,
    },
    Sigmoid { a: NodeId },
    Relu { a: NodeId },
    MeanPool { a: NodeId, axis: usize },
    SumAll { a: NodeId },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId },
    Concat { a: NodeId, b: NodeId, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, end: usize },
    Embed { table: NodeId, ids: Arc<Vec<usize>> },
    CrossEntropy { logits: NodeId, labels: Arc<Vec<usize>> },
}

struct Node {
    op: Op,
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    /// Op-specific saved values (layer-norm row stats, cross-entropy probs).
    stash: Vec<f64>,
}

/// A Wengert tape: ops are appended in execution order, so the record list
/// is already a topological order and backward is a single reverse sweep.
/// The sweep order is fixed, which makes gradient accumulation deterministic.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    checked: bool,
    layer_norm_eps: f64,
}

impl Graph {
    /// `checked` enables NaN/Inf guards on every op output.
    pub fn new(checked: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            checked,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, stash: Vec<f64>) -> Result<NodeId> {
        if self.checked && !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: op_name(&op),
            });
        }
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            grad: None,
            stash,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Register a detached tensor as a leaf.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Input, value, Vec::new())
    }

    /// Register a named parameter as a leaf; its gradient is retrievable via
    /// [`Graph::param_grads`] after backward.
    pub fn param(&mut self, set: &ParamSet, name: &str) -> Result<NodeId> {
        let tensor = set.get(name).ok_or_else(|| TensorError::UnknownParam {
            name: name.to_string(),
        })?;
        let slot = self.params.len();
        if self.checked && !tensor.is_finite() {
            return Err(TensorError::NonFinite { op: "param" });
        }
        self.nodes.push(Node {
            op: Op::Param { slot },
            value: Arc::clone(tensor),
            grad: None,
            stash: Vec::new(),
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (p, q) = self.shape(a);
        let (q2, r) = self.shape(b);
        if q != q2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = Tensor::zeros(p, r);
        mm_nn_acc(
            out.data_mut(),
            self.value(a).data(),
            self.value(b).data(),
            p,
            q,
            r,
        );
        self.push(Op::MatMul { a, b }, out, Vec::new())
    }

    /// `a . transpose(b)`: `[p, q] x [r, q] -> [p, r]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (p, q) = self.shape(a);
        let (r, q2) = self.shape(b);
        if q != q2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = Tensor::zeros(p, r);
        mm_nt_acc(
            out.data_mut(),
            self.value(a).data(),
            self.value(b).data(),
            p,
            q,
            r,
        );
        self.push(Op::MatMulNT { a, b }, out, Vec::new())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        let (p, c) = self.shape(a);
        self.push(Op::Add { a, b }, Tensor::new(p, c, data)?, Vec::new())
    }

    /// Add a `[1, c]` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let va = self.value(a).data();
        let vb = self.value(bias).data();
        let mut data = Vec::with_capacity(p * c);
        for i in 0..p {
            for j in 0..c {
                data.push(va[i * c + j] + vb[j]);
            }
        }
        self.push(Op::AddBias { a, bias }, Tensor::new(p, c, data)?, Vec::new())
    }

    /// Elementwise `mul * a + shift` with scalar constants.
    pub fn affine(&mut self, a: NodeId, mul: f64, shift: f64) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        let data = self.value(a).data().iter().map(|x| mul * x + shift).collect();
        self.push(
            Op::Affine { a, mul, shift },
            Tensor::new(p, c, data)?,
            Vec::new(),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        let (p, c) = self.shape(a);
        self.push(Op::Mul { a, b }, Tensor::new(p, c, data)?, Vec::new())
    }

    /// Scale row i of `a` by `col[i]`; `col` is `[p, 1]`.
    pub fn mul_col(&mut self, col: NodeId, a: NodeId) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        if self.shape(col) != (p, 1) {
            return Err(self.shape_err("mul_col", col, a));
        }
        let vc = self.value(col).data();
        let va = self.value(a).data();
        let mut data = Vec::with_capacity(p * c);
        for i in 0..p {
            let s = vc[i];
            for j in 0..c {
                data.push(s * va[i * c + j]);
            }
        }
        self.push(Op::MulCol { col, a }, Tensor::new(p, c, data)?, Vec::new())
    }

    /// Scale column j of `a` by `w[j]`; `w` is `[k, 1]` for `a: [p, k]`.
    pub fn scale_cols(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (p, k) = self.shape(a);
        if self.shape(w) != (k, 1) {
            return Err(self.shape_err("scale_cols", a, w));
        }
        let va = self.value(a).data();
        let vw = self.value(w).data();
        let mut data = Vec::with_capacity(p * k);
        for i in 0..p {
            for j in 0..k {
                data.push(va[i * k + j] * vw[j]);
            }
        }
        self.push(Op::ScaleCols { a, w }, Tensor::new(p, k, data)?, Vec::new())
    }

    /// Row-wise softmax with max-subtraction. Positions where the mask is
    /// `false` get weight exactly 0; a fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<Mask>) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        if let Some(m) = &mask {
            if m.keep().len() != p * c {
                return Err(TensorError::InvalidShape {
                    op: "softmax_rows",
                    shape: vec![p, c],
                    reason: format!("mask has {} entries", m.keep().len()),
                });
            }
        }
        let va = self.value(a).data();
        let mut data = vec![0.0; p * c];
        for i in 0..p {
            let row = &va[i * c..(i + 1) * c];
            let keep = |j: usize| mask.as_ref().map_or(true, |m| m.keep()[i * c + j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if keep(j) && row[j] > max {
                    max = row[j];
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut sum = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        self.push(
            Op::SoftmaxRows { a, mask },
            Tensor::new(p, c, data)?,
            Vec::new(),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(Op::Sigmoid { a }, Tensor::new(p, c, data)?, Vec::new())
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu { a }, Tensor::new(p, c, data)?, Vec::new())
    }

    /// Mean over rows (`axis == 0`, giving `[1, c]`) or over columns
    /// (`axis == 1`, giving `[p, 1]`). Accumulates left to right.
    pub fn mean_pool(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        let va = self.value(a).data();
        let (out, shape) = match axis {
            0 => {
                if p == 0 {
                    return Err(TensorError::EmptyInput {
                        op: "mean_pool",
                        what: "no rows to pool".into(),
                    });
                }
                let mut acc = vec![0.0; c];
                for i in 0..p {
                    for j in 0..c {
                        acc[j] += va[i * c + j];
                    }
                }
                for v in &mut acc {
                    *v /= p as f64;
                }
                (acc, (1, c))
            }
            1 => {
                if c == 0 {
                    return Err(TensorError::EmptyInput {
                        op: "mean_pool",
                        what: "no columns to pool".into(),
                    });
                }
                let mut acc = vec![0.0; p];
                for (i, slot) in acc.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for j in 0..c {
                        s += va[i * c + j];
                    }
                    *slot = s / c as f64;
                }
                (acc, (p, 1))
            }
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "mean_pool",
                    shape: vec![p, c],
                    reason: format!("axis {axis} for a 2-D tensor"),
                })
            }
        };
        self.push(
            Op::MeanPool { a, axis },
            Tensor::new(shape.0, shape.1, out)?,
            Vec::new(),
        )
    }

    /// Sum of all entries, as a `[1, 1]` tensor.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll { a }, Tensor::scalar(s), Vec::new())
    }

    /// Row-wise layer normalization with learned gain and bias (`[1, c]`).
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        if self.shape(gain) != (1, c) {
            return Err(self.shape_err("layer_norm", a, gain));
        }
        if self.shape(bias) != (1, c) {
            return Err(self.shape_err("layer_norm", a, bias));
        }
        let eps = self.layer_norm_eps;
        let va = self.value(a).data();
        let vg = self.value(gain).data();
        let vb = self.value(bias).data();
        let mut data = vec![0.0; p * c];
        let mut stash = Vec::with_capacity(2 * p); // (mean, rstd) per row
        for i in 0..p {
            let row = &va[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            stash.push(mean);
            stash.push(rstd);
            for j in 0..c {
                data[i * c + j] = vg[j] * ((row[j] - mean) * rstd) + vb[j];
            }
        }
        self.push(
            Op::LayerNorm { a, gain, bias },
            Tensor::new(p, c, data)?,
            stash,
        )
    }

    /// Concatenate along rows (`axis == 0`) or columns (`axis == 1`).
    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (pa, ca) = self.shape(a);
        let (pb, cb) = self.shape(b);
        let out = match axis {
            0 => {
                if ca != cb {
                    return Err(self.shape_err("concat", a, b));
                }
                let mut data = Vec::with_capacity((pa + pb) * ca);
                data.extend_from_slice(self.value(a).data());
                data.extend_from_slice(self.value(b).data());
                Tensor::new(pa + pb, ca, data)?
            }
            1 => {
                if pa != pb {
                    return Err(self.shape_err("concat", a, b));
                }
                let va = self.value(a).data();
                let vb = self.value(b).data();
                let mut data = Vec::with_capacity(pa * (ca + cb));
                for i in 0..pa {
                    data.extend_from_slice(&va[i * ca..(i + 1) * ca]);
                    data.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
                }
                Tensor::new(pa, ca + cb, data)?
            }
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "concat",
                    shape: vec![pa, ca],
                    reason: format!("axis {axis} for a 2-D tensor"),
                })
            }
        };
        self.push(Op::Concat { a, b, axis }, out, Vec::new())
    }

    /// Take rows (`axis == 0`) or columns (`axis == 1`) in `[start, end)`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let (p, c) = self.shape(a);
        let bound = if axis == 0 { p } else { c };
        if start > end || end > bound {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: end,
                bound,
            });
        }
        let va = self.value(a).data();
        let out = match axis {
            0 => Tensor::new(end - start, c, va[start * c..end * c].to_vec())?,
            1 => {
                let w = end - start;
                let mut data = Vec::with_capacity(p * w);
                for i in 0..p {
                    data.extend_from_slice(&va[i * c + start..i * c + end]);
                }
                Tensor::new(p, w, data)?
            }
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "slice",
                    shape: vec![p, c],
                    reason: format!("axis {axis} for a 2-D tensor"),
                })
            }
        };
        self.push(
            Op::Slice {
                a,
                axis,
                start,
                end,
            },
            out,
            Vec::new(),
        )
    }

    /// Gather rows of an embedding table: `table[ids[i], :]` stacked.
    pub fn embed(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        let (v, d) = self.shape(table);
        let vt = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in &ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embed",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&vt[id * d..(id + 1) * d]);
        }
        let n = ids.len();
        self.push(
            Op::Embed {
                table,
                ids: Arc::new(ids),
            },
            Tensor::new(n, d, data)?,
            Vec::new(),
        )
    }

    /// Token-averaged cross entropy over rows whose label is not
    /// [`IGNORE_INDEX`]. Log-sum-exp is max-stabilized; the average is over
    /// non-ignored rows only.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Vec<usize>,
        ignore: usize,
    ) -> Result<NodeId> {
        let (p, v) = self.shape(logits);
        if labels.len() != p {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy",
                shape: vec![p, v],
                reason: format!("{} labels for {} rows", labels.len(), p),
            });
        }
        let mut active = 0usize;
        for &y in &labels {
            if y == ignore {
                continue;
            }
            if y >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    bound: v,
                });
            }
            active += 1;
        }
        if active == 0 {
            return Err(TensorError::EmptyInput {
                op: "cross_entropy",
                what: "every label is ignored".into(),
            });
        }
        let vl = self.value(logits).data();
        // Stash holds softmax probabilities for backward plus the active count.
        let mut probs = vec![0.0; p * v];
        let mut total = 0.0;
        for i in 0..p {
            let row = &vl[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[i * v + j] = e;
                sum += e;
            }
            for j in 0..v {
                probs[i * v + j] /= sum;
            }
            let y = labels[i];
            if y != ignore {
                total += max + sum.ln() - row[y];
            }
        }
        let loss = total / active as f64;
        let mut stash = probs;
        stash.push(active as f64);
        let labels: Vec<usize> = labels
            .iter()
            .map(|&y| if y == ignore { IGNORE_INDEX } else { y })
            .collect();
        self.push(
            Op::CrossEntropy {
                logits,
                labels: Arc::new(labels),
            },
            Tensor::scalar(loss),
            stash,
        )
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate in the
    /// fixed reverse tape order, so repeated runs are bit-identical.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let (p, c) = self.shape(loss);
        if (p, c) != (1, 1) {
            return Err(TensorError::InvalidShape {
                op: "backward",
                shape: vec![p, c],
                reason: "loss must be a scalar".into(),
            });
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.backprop_node(idx, &op, &out_grad)?;
            self.nodes[idx].grad = Some(out_grad);
        }
        Ok(())
    }

    /// Gradients of every registered parameter, in registration order.
    /// Parameters untouched by the loss get zero gradients.
    pub fn param_grads(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = match self.grad(*id) {
                    Some(t) => t.clone(),
                    None => {
                        let (p, c) = self.shape(*id);
                        Tensor::zeros(p, c)
                    }
                };
                (name.clone(), g)
            })
            .collect()
    }

    fn accumulate(&mut self, id: NodeId, delta: &Tensor) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                let gd = g.data_mut();
                for (slot, d) in gd.iter_mut().zip(delta.data()) {
                    *slot += d;
                }
            }
            None => node.grad = Some(delta.clone()),
        }
    }

    fn backprop_node(&mut self, idx: usize, op: &Op, out_grad: &Tensor) -> Result<()> {
        match op {
            Op::Input | Op::Param { .. } => {}
            Op::MatMul { a, b } => {
                let (p, q) = self.shape(*a);
                let (_, r) = self.shape(*b);
                let mut da = Tensor::zeros(p, q);
                mm_nt_acc(
                    da.data_mut(),
                    out_grad.data(),
                    self.value(*b).data(),
                    p,
                    r,
                    q,
                );
                let mut db = Tensor::zeros(q, r);
                mm_tn_acc(
                    db.data_mut(),
                    self.value(*a).data(),
                    out_grad.data(),
                    p,
                    q,
                    r,
                );
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::MatMulNT { a, b } => {
                // out = a . b^T ; da = g . b ; db = g^T . a
                let (p, q) = self.shape(*a);
                let (r, _) = self.shape(*b);
                let mut da = Tensor::zeros(p, q);
                mm_nn_acc(
                    da.data_mut(),
                    out_grad.data(),
                    self.value(*b).data(),
                    p,
                    r,
                    q,
                );
                let mut db = Tensor::zeros(r, q);
                mm_tn_acc(
                    db.data_mut(),
                    out_grad.data(),
                    self.value(*a).data(),
                    p,
                    r,
                    q,
                );
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, out_grad);
                self.accumulate(*b, out_grad);
            }
            Op::AddBias { a, bias } => {
                self.accumulate(*a, out_grad);
                let (p, c) = self.shape(*a);
                let mut db = Tensor::zeros(1, c);
                {
                    let d = db.data_mut();
                    let g = out_grad.data();
                    for i in 0..p {
                        for j in 0..c {
                            d[j] += g[i * c + j];
                        }
                    }
                }
                self.accumulate(*bias, &db);
            }
            Op::Affine { a, mul, .. } => {
                let (p, c) = out_grad.shape();
                let data = out_grad.data().iter().map(|g| mul * g).collect();
                self.accumulate(*a, &Tensor::new(p, c, data)?);
            }
            Op::Mul { a, b } => {
                let (p, c) = out_grad.shape();
                let vb = self.value(*b).data();
                let va = self.value(*a).data();
                let da: Vec<f64> = out_grad.data().iter().zip(vb).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = out_grad.data().iter().zip(va).map(|(g, x)| g * x).collect();
                self.accumulate(*a, &Tensor::new(p, c, da)?);
                self.accumulate(*b, &Tensor::new(p, c, db)?);
            }
            Op::MulCol { col, a } => {
                let (p, c) = self.shape(*a);
                let vc = self.value(*col).data();
                let va = self.value(*a).data();
                let g = out_grad.data();
                let mut dcol = Tensor::zeros(p, 1);
                let mut da = Tensor::zeros(p, c);
                for i in 0..p {
                    let mut s = 0.0;
                    for j in 0..c {
                        s += g[i * c + j] * va[i * c + j];
                        da.data_mut()[i * c + j] = g[i * c + j] * vc[i];
                    }
                    dcol.data_mut()[i] = s;
                }
                self.accumulate(*col, &dcol);
                self.accumulate(*a, &da);
            }
            Op::ScaleCols { a, w } => {
                let (p, k) = self.shape(*a);
                let vw = self.value(*w).data();
                let va = self.value(*a).data();
                let g = out_grad.data();
                let mut da = Tensor::zeros(p, k);
                let mut dw = Tensor::zeros(k, 1);
                for i in 0..p {
                    for j in 0..k {
                        da.data_mut()[i * k + j] = g[i * k + j] * vw[j];
                        dw.data_mut()[j] += g[i * k + j] * va[i * k + j];
                    }
                }
                self.accumulate(*a, &da);
                self.accumulate(*w, &dw);
            }
            Op::SoftmaxRows { a, .. } => {
                let (p, c) = self.shape(*a);
                let s = Arc::clone(&self.nodes[idx].value);
                let g = out_grad.data();
                let mut da = Tensor::zeros(p, c);
                for i in 0..p {
                    let srow = &s.data()[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += grow[j] * srow[j];
                    }
                    for j in 0..c {
                        da.data_mut()[i * c + j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::Sigmoid { a } => {
                let (p, c) = self.shape(*a);
                let s = Arc::clone(&self.nodes[idx].value);
                let data: Vec<f64> = out_grad
                    .data()
                    .iter()
                    .zip(s.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(*a, &Tensor::new(p, c, data)?);
            }
            Op::Relu { a } => {
                let (p, c) = self.shape(*a);
                let y = Arc::clone(&self.nodes[idx].value);
                let data: Vec<f64> = out_grad
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(*a, &Tensor::new(p, c, data)?);
            }
            Op::MeanPool { a, axis } => {
                let (p, c) = self.shape(*a);
                let g = out_grad.data();
                let mut da = Tensor::zeros(p, c);
                match axis {
                    0 => {
                        let inv = 1.0 / p as f64;
                        for i in 0..p {
                            for j in 0..c {
                                da.data_mut()[i * c + j] = g[j] * inv;
                            }
                        }
                    }
                    _ => {
                        let inv = 1.0 / c as f64;
                        for i in 0..p {
                            for j in 0..c {
                                da.data_mut()[i * c + j] = g[i] * inv;
                            }
                        }
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::SumAll { a } => {
                let (p, c) = self.shape(*a);
                let da = Tensor::full(p, c, out_grad.item());
                self.accumulate(*a, &da);
            }
            Op::LayerNorm { a, gain, bias } => {
                let (p, c) = self.shape(*a);
                let va = self.value(*a).data();
                let vg = self.value(*gain).data();
                let stash = self.nodes[idx].stash.clone();
                let g = out_grad.data();
                let mut da = Tensor::zeros(p, c);
                let mut dgain = Tensor::zeros(1, c);
                let mut dbias = Tensor::zeros(1, c);
                let n = c as f64;
                for i in 0..p {
                    let mean = stash[2 * i];
                    let rstd = stash[2 * i + 1];
                    let row = &va[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    // dxhat, plus row sums needed by the input gradient
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = grow[j] * vg[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgain.data_mut()[j] += grow[j] * xhat;
                        dbias.data_mut()[j] += grow[j];
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = grow[j] * vg[j];
                        da.data_mut()[i * c + j] =
                            rstd * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
                self.accumulate(*a, &da);
                self.accumulate(*gain, &dgain);
                self.accumulate(*bias, &dbias);
            }
            Op::Concat { a, b, axis } => {
                let (pa, ca) = self.shape(*a);
                let (pb, cb) = self.shape(*b);
                let g = out_grad.data();
                match axis {
                    0 => {
                        let da = Tensor::new(pa, ca, g[..pa * ca].to_vec())?;
                        let db = Tensor::new(pb, cb, g[pa * ca..].to_vec())?;
                        self.accumulate(*a, &da);
                        self.accumulate(*b, &db);
                    }
                    _ => {
                        let w = ca + cb;
                        let mut da = Tensor::zeros(pa, ca);
                        let mut db = Tensor::zeros(pb, cb);
                        for i in 0..pa {
                            da.data_mut()[i * ca..(i + 1) * ca]
                                .copy_from_slice(&g[i * w..i * w + ca]);
                            db.data_mut()[i * cb..(i + 1) * cb]
                                .copy_from_slice(&g[i * w + ca..(i + 1) * w]);
                        }
                        self.accumulate(*a, &da);
                        self.accumulate(*b, &db);
                    }
                }
            }
            Op::Slice {
                a,
                axis,
                start,
                end,
            } => {
                let (p, c) = self.shape(*a);
                let g = out_grad.data();
                let mut da = Tensor::zeros(p, c);
                match axis {
                    0 => {
                        da.data_mut()[start * c..end * c].copy_from_slice(g);
                    }
                    _ => {
                        let w = end - start;
                        for i in 0..p {
                            da.data_mut()[i * c + start..i * c + end]
                                .copy_from_slice(&g[i * w..(i + 1) * w]);
                        }
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::Embed { table, ids } => {
                let (v, d) = self.shape(*table);
                let g = out_grad.data();
                let mut dt = Tensor::zeros(v, d);
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    let src = &g[i * d..(i + 1) * d];
                    for (slot, x) in dst.iter_mut().zip(src) {
                        *slot += x;
                    }
                }
                self.accumulate(*table, &dt);
            }
            Op::CrossEntropy { logits, labels } => {
                let (p, v) = self.shape(*logits);
                let stash = &self.nodes[idx].stash;
                let active = stash[p * v];
                let scale = out_grad.item() / active;
                let mut dl = Tensor::zeros(p, v);
                for i in 0..p {
                    let y = labels[i];
                    if y == IGNORE_INDEX {
                        continue;
                    }
                    for j in 0..v {
                        let p_ij = stash[i * v + j];
                        let target = if j == y { 1.0 } else { 0.0 };
                        dl.data_mut()[i * v + j] = scale * (p_ij - target);
                    }
                }
                self.accumulate(*logits, &dl);
            }
        }
        Ok(())
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> TensorError {
        let (pa, ca) = self.shape(a);
        let (pb, cb) = self.shape(b);
        TensorError::ShapeMismatch {
            op,
            lhs: vec![pa, ca],
            rhs: vec![pb, cb],
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param { .. } => "param",
        Op::MatMul { .. } => "matmul",
        Op::MatMulNT { .. } => "matmul_nt",
        Op::Add { .. } => "add",
        Op::AddBias { .. } => "add_bias",
        Op::Affine { .. } => "affine",
        Op::Mul { .. } => "mul",
        Op::MulCol { .. } => "mul_col",
        Op::ScaleCols { .. } => "scale_cols",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Relu { .. } => "relu",
        Op::MeanPool { .. } => "mean_pool",
        Op::SumAll { .. } => "sum_all",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Embed { .. } => "embed",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

/// c[p,r] += a[p,q] . b[q,r]
fn mm_nn_acc(c: &mut [f64], a: &[f64], b: &[f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let crow = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            let brow = &b[k * r..(k + 1) * r];
            for j in 0..r {
                crow[j] += aik * brow[j];
            }
        }
    }
}

/// c[p,r] += a[p,q] . b[r,q]^T
fn mm_nt_acc(c: &mut [f64], a: &[f64], b: &[f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let crow = &mut c[i * r..(i + 1) * r];
        for j in 0..r {
            crow[j] += dot(arow, &b[j * q..(j + 1) * q]);
        }
    }
}

/// c[q,r] += a[p,q]^T . b[p,r]
fn mm_tn_acc(c: &mut [f64], a: &[f64], b: &[f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            let crow = &mut c[k * r..(k + 1) * r];
            for j in 0..r {
                crow[j] += aik * brow[j];
            }
        }
    }
}

/// Four-way unrolled dot product. The summation order is fixed, so results
/// are reproducible run to run.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s2) + (s1 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}
