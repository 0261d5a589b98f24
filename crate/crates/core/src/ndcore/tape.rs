//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order and only ever reference earlier
//! nodes, so the node list is already a topological order and `backward`
//! walks it once in reverse.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::sync::Arc;

use super::kernels::{matmul, matmul_nt, matmul_tn};
use super::{shape_err, NdError, Rng, Tensor, BN_EPS};
use crate::graph_build::{Graph, NormCoeff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-wise `1 / c_ij` weights of the self-looped graph, ready for
/// aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdjacency {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl NormAdjacency {
    pub fn new(graph: &Graph, coeffs: &NormCoeff) -> Result<Self, NdError> {
        if coeffs.values.len() != graph.edges.len() {
            return Err(NdError::CoeffGraphMismatch { coeffs: coeffs.values.len(), edges: graph.edges.len() });
        }
        let mut rows = vec![Vec::new(); graph.n_nodes];
        for (&(i, j), &c) in graph.edges.iter().zip(&coeffs.values) {
            rows[i].push((j, 1.0 / c));
            if i != j {
                rows[j].push((i, 1.0 / c));
            }
        }
        for r in &mut rows {
            r.sort_by_key(|&(j, _)| j);
        }
        Ok(NormAdjacency { rows })
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }

    /// Disjoint union: block `k` keeps its weights, indices shifted past
    /// the earlier blocks.
    pub fn block_diag(parts: &[&NormAdjacency]) -> NormAdjacency {
        let mut rows = Vec::with_capacity(parts.iter().map(|p| p.n_nodes()).sum());
        let mut offset = 0;
        for p in parts {
            rows.extend(p.rows.iter().map(|r| r.iter().map(|&(j, w)| (j + offset, w)).collect()));
            offset += p.n_nodes();
        }
        NormAdjacency { rows }
    }

    /// `out[i] = Σ_j w_ij x[j]` over a row-major `n x d` buffer.
    fn aggregate(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let o = &mut out[i * d..(i + 1) * d];
            for &(j, w) in row {
                for (ov, xv) in o.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                    *ov += w * xv;
                }
            }
        }
        out
    }
}

/// Weighted batch statistics from one training-mode batchnorm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    /// Unbiased (total weight - 1) variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    GraphConv { h: Var, w: Var, b: Var, adj: Arc<NormAdjacency> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, weights: Option<Arc<Vec<f64>>>, training: bool },
    GroupMax { x: Var, argmax: Vec<usize> },
    GroupMean { x: Var, groups: Arc<Vec<Vec<usize>>> },
    Reshape(Var),
    PointTransform { points: Var, delta: Var, groups: Arc<Vec<Range<usize>>> },
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros of the given shape when nothing flowed into it.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads.get_mut(v.0).and_then(Option::take).unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn two_d(t: &Tensor, op: &'static str) -> Result<(usize, usize), NdError> {
    if t.rank() != 2 {
        return Err(shape_err(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, NdError> {
        if !value.is_finite() {
            return Err(NdError::NonFinite(op_name(&op)));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// Adds a length-`c` bias to every row of an `r x c` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NdError> {
        let (_, c) = two_d(self.value(x), "add_bias")?;
        if self.value(b).len() != c {
            return Err(shape_err("add_bias", format!("bias of {} for {c} columns", self.value(b).len())));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddBias(x, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var, NdError> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.max(0.0)).collect())?;
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Inverted dropout. Identity (no new node) outside training or at `p = 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var, NdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NdError::InvalidProbability(p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len()).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// Degree-normalized graph convolution, pre-activation:
    /// `out[i] = b + Σ_{j ∈ N(i)} (h[j] W) / c_ij`.
    pub fn graph_conv(&mut self, adj: &Arc<NormAdjacency>, h: Var, w: Var, b: Var) -> Result<Var, NdError> {
        let (n, d_in) = two_d(self.value(h), "graph_conv")?;
        let (w_in, d_out) = two_d(self.value(w), "graph_conv")?;
        if n != adj.n_nodes() {
            return Err(shape_err("graph_conv", format!("{n} feature rows for {} nodes", adj.n_nodes())));
        }
        if w_in != d_in || self.value(b).len() != d_out {
            return Err(shape_err(
                "graph_conv",
                format!("h {:?}, W {:?}, b {:?}", self.value(h).shape(), self.value(w).shape(), self.value(b).shape()),
            ));
        }
        let hw = matmul(self.value(h).data(), self.value(w).data(), n, d_in, d_out);
        let mut out = adj.aggregate(&hw, d_out);
        let bias = self.value(b).data();
        for row in out.chunks_mut(d_out.max(1)) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let out = Tensor::matrix(n, d_out, out)?;
        let ng = self.ng(h) || self.ng(w) || self.ng(b);
        self.push(out, Op::GraphConv { h, w, b, adj: Arc::clone(adj) }, ng)
    }

    /// Per-column batch normalization followed by `γ x̂ + β`.
    ///
    /// In training mode the statistics come from the rows of `x`, each row
    /// counted `weights[r]` times (1 when `weights` is `None`), and the
    /// weighted batch statistics are returned for the running averages.
    /// Outside training the supplied running mean/variance are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        weights: Option<Arc<Vec<f64>>>,
        running_mean: &[f64],
        running_var: &[f64],
        training: bool,
    ) -> Result<(Var, Option<BnStats>), NdError> {
        let (r, c) = two_d(self.value(x), "batchnorm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err("batchnorm", format!("affine parameters for {c} features")));
        }
        if let Some(w) = &weights {
            if w.len() != r {
                return Err(shape_err("batchnorm", format!("{} weights for {r} rows", w.len())));
            }
        }
        let xd = self.value(x).data();
        let (mean, var, stats) = if training {
            let total: f64 = weights.as_ref().map(|w| w.iter().sum()).unwrap_or(r as f64);
            if total <= 1.0 {
                return Err(NdError::InvalidBatch(total as usize));
            }
            let wt = |i: usize| weights.as_ref().map_or(1.0, |w| w[i]);
            let mut mean = vec![0.0; c];
            for i in 0..r {
                let wi = wt(i);
                for (m, v) in mean.iter_mut().zip(&xd[i * c..(i + 1) * c]) {
                    *m += wi * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= total);
            let mut var = vec![0.0; c];
            for i in 0..r {
                let wi = wt(i);
                for ((s, v), m) in var.iter_mut().zip(&xd[i * c..(i + 1) * c]).zip(&mean) {
                    *s += wi * (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= total);
            let unbiased = var.iter().map(|v| v * total / (total - 1.0)).collect();
            let stats = BnStats { mean: mean.clone(), var: unbiased };
            (mean, var, Some(stats))
        } else {
            if running_mean.len() != c || running_var.len() != c {
                return Err(shape_err("batchnorm", "running statistics length"));
            }
            (running_mean.to_vec(), running_var.to_vec(), None)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let k = i * c + j;
                xhat[k] = (xd[k] - mean[j]) * inv_std[j];
                out[k] = g[j] * xhat[k] + bt[j];
            }
        }
        let out = Tensor::matrix(r, c, out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, weights, training }, ng)?;
        Ok((v, stats))
    }

    /// Column-wise max over each group of rows; output row `g` for group `g`.
    /// Ties go to the earliest row listed in the group.
    pub fn group_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var, NdError> {
        let (r, c) = two_d(self.value(x), "group_max")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; groups.len() * c];
        let mut argmax = vec![0usize; groups.len() * c];
        for (g, rows) in groups.iter().enumerate() {
            let (&first, rest) = rows.split_first().ok_or(NdError::EmptyMask)?;
            if rows.iter().any(|&i| i >= r) {
                return Err(shape_err("group_max", "row index out of range"));
            }
            for j in 0..c {
                let mut best = first;
                for &i in rest {
                    if xd[i * c + j] > xd[best * c + j] {
                        best = i;
                    }
                }
                out[g * c + j] = xd[best * c + j];
                argmax[g * c + j] = best;
            }
        }
        let out = Tensor::matrix(groups.len(), c, out)?;
        let ng = self.ng(x);
        self.push(out, Op::GroupMax { x, argmax }, ng)
    }

    /// Column-wise mean over each group of rows.
    pub fn group_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var, NdError> {
        let (r, c) = two_d(self.value(x), "group_mean")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; groups.len() * c];
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                return Err(NdError::EmptyMask);
            }
            if rows.iter().any(|&i| i >= r) {
                return Err(shape_err("group_mean", "row index out of range"));
            }
            let o = &mut out[g * c..(g + 1) * c];
            for &i in rows {
                for (ov, v) in o.iter_mut().zip(&xd[i * c..(i + 1) * c]) {
                    *ov += v;
                }
            }
            let k = rows.len() as f64;
            o.iter_mut().for_each(|v| *v /= k);
        }
        let out = Tensor::matrix(groups.len(), c, out)?;
        let ng = self.ng(x);
        self.push(out, Op::GroupMean { x, groups: Arc::new(groups.to_vec()) }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NdError> {
        let out = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    /// Multiplies every point row of group `g` by `I + Δ_g`, where row `g`
    /// of `delta` holds the 3x3 `Δ_g` row-major.
    pub fn point_transform(&mut self, points: Var, delta: Var, groups: &[Range<usize>]) -> Result<Var, NdError> {
        let (r, c) = two_d(self.value(points), "point_transform")?;
        let (g, nine) = two_d(self.value(delta), "point_transform")?;
        if c != 3 || nine != 9 || g != groups.len() || groups.iter().any(|rg| rg.end > r) {
            return Err(shape_err("point_transform", "points must be R x 3, delta G x 9, groups within R"));
        }
        let p = self.value(points).data();
        let d = self.value(delta).data();
        let mut out = vec![0.0; r * 3];
        for (gi, rg) in groups.iter().enumerate() {
            let t = &d[gi * 9..gi * 9 + 9];
            for i in rg.clone() {
                for b in 0..3 {
                    let mut s = p[i * 3 + b];
                    for a in 0..3 {
                        s += p[i * 3 + a] * t[a * 3 + b];
                    }
                    out[i * 3 + b] = s;
                }
            }
        }
        let out = Tensor::matrix(r, 3, out)?;
        let ng = self.ng(points) || self.ng(delta);
        self.push(out, Op::PointTransform { points, delta, groups: Arc::new(groups.to_vec()) }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NdError> {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Mean over rows of `-log softmax(logits[b])[labels[b]]`, computed with
    /// log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NdError> {
        let t = self.value(logits);
        let (b, c) = if t.rank() == 1 { (1, t.len()) } else { two_d(t, "cross_entropy")? };
        if labels.len() != b || c == 0 {
            return Err(shape_err("cross_entropy", format!("{} labels for {b} rows of {c} logits", labels.len())));
        }
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(NdError::LabelOutOfRange { label, classes: c });
            }
            let row = &t.data()[i * c..(i + 1) * c];
            let lse = super::log_sum_exp(row);
            total += lse - row[label];
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let ng = self.ng(logits);
        self.push(Tensor::scalar(total / b as f64), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, ng)
    }

    /// Hash of every piecewise-selection made during the forward pass: ReLU
    /// sign patterns and max-readout winners. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::GroupMax { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NdError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        if !self.ng(loss) {
            return Err(NdError::DetachedTensor);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !self.ng(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaf_grads[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.ng(*a) {
                        acc(*a, matmul_nt(&g, tb.data(), m, n, k), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, matmul_tn(ta.data(), &g, m, k, n), &mut grads);
                    }
                }
                Op::AddBias(x, b) => {
                    let c = self.value(*b).len();
                    if self.ng(*b) {
                        let mut db = vec![0.0; c];
                        for row in g.chunks(c) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        acc(*b, db, &mut grads);
                    }
                    acc(*x, g, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    acc(*a, g.iter().zip(tb).map(|(x, y)| x * y).collect(), &mut grads);
                    acc(*b, g.iter().zip(ta).map(|(x, y)| x * y).collect(), &mut grads);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    acc(*x, g.iter().zip(xv).map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 }).collect(), &mut grads);
                }
                Op::Dropout { x, mask } => {
                    acc(*x, g.iter().zip(mask).map(|(gv, m)| gv * m).collect(), &mut grads);
                }
                Op::GraphConv { h, w, b, adj } => {
                    let (th, tw) = (self.value(*h), self.value(*w));
                    let (n, d_in) = (th.shape()[0], th.shape()[1]);
                    let d_out = tw.shape()[1];
                    if self.ng(*b) {
                        let mut db = vec![0.0; d_out];
                        for row in g.chunks(d_out.max(1)) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        acc(*b, db, &mut grads);
                    }
                    // the normalized adjacency is symmetric
                    let dhw = adj.aggregate(&g, d_out);
                    if self.ng(*w) {
                        acc(*w, matmul_tn(th.data(), &dhw, n, d_in, d_out), &mut grads);
                    }
                    if self.ng(*h) {
                        acc(*h, matmul_nt(&dhw, tw.data(), n, d_out, d_in), &mut grads);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, weights, training } => {
                    let c = inv_std.len();
                    let r = g.len() / c;
                    let gm = self.value(*gamma).data();
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            sum_g[j] += g[i * c + j];
                            sum_gx[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                    if self.ng(*x) {
                        let mut dx = vec![0.0; r * c];
                        if *training {
                            let total: f64 = weights.as_ref().map(|w| w.iter().sum()).unwrap_or(r as f64);
                            for i in 0..r {
                                let f = weights.as_ref().map_or(1.0, |w| w[i]) / total;
                                for j in 0..c {
                                    let k = i * c + j;
                                    dx[k] = gm[j] * inv_std[j] * (g[k] - f * sum_g[j] - f * xhat[k] * sum_gx[j]);
                                }
                            }
                        } else {
                            for i in 0..r {
                                for j in 0..c {
                                    dx[i * c + j] = g[i * c + j] * gm[j] * inv_std[j];
                                }
                            }
                        }
                        acc(*x, dx, &mut grads);
                    }
                    acc(*gamma, sum_gx, &mut grads);
                    acc(*beta, sum_g, &mut grads);
                }
                Op::GroupMax { x, argmax } => {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let mut dx = vec![0.0; tx.len()];
                    for (k, &row) in argmax.iter().enumerate() {
                        dx[row * c + k % c] += g[k];
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::GroupMean { x, groups } => {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let mut dx = vec![0.0; tx.len()];
                    for (gi, rows) in groups.iter().enumerate() {
                        let k = rows.len() as f64;
                        for &i in rows {
                            for j in 0..c {
                                dx[i * c + j] += g[gi * c + j] / k;
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Reshape(x) => acc(*x, g, &mut grads),
                Op::PointTransform { points, delta, groups } => {
                    let p = self.value(*points).data();
                    let d = self.value(*delta).data();
                    let mut dp = vec![0.0; p.len()];
                    let mut dd = vec![0.0; d.len()];
                    for (gi, rg) in groups.iter().enumerate() {
                        let t = &d[gi * 9..gi * 9 + 9];
                        for i in rg.clone() {
                            for a in 0..3 {
                                let mut s = g[i * 3 + a];
                                for b in 0..3 {
                                    s += g[i * 3 + b] * t[a * 3 + b];
                                    dd[gi * 9 + a * 3 + b] += p[i * 3 + a] * g[i * 3 + b];
                                }
                                dp[i * 3 + a] = s;
                            }
                        }
                    }
                    acc(*points, dp, &mut grads);
                    acc(*delta, dd, &mut grads);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(*x, vec![g[0]; n], &mut grads);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let scale = g[0] / b as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * c + l] -= scale;
                    }
                    acc(*logits, d, &mut grads);
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Relu(_) => "relu",
        Op::Dropout { .. } => "dropout",
        Op::GraphConv { .. } => "graph_conv",
        Op::BatchNorm { .. } => "batchnorm",
        Op::GroupMax { .. } => "group_max",
        Op::GroupMean { .. } => "group_mean",
        Op::Reshape(_) => "reshape",
        Op::PointTransform { .. } => "point_transform",
        Op::Sum(_) => "sum",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}
