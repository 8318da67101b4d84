//! Dense tensors on a reverse-mode differentiation tape.
//!
//! A [`Graph`] records every operation in insertion order together with its
//! output [`Tensor`]; [`Graph::backward`] walks the tape once in reverse,
//! accumulating adjoints into each node that requires gradients. The op set is
//! deliberately small — matrix product, same-shape elementwise arithmetic with
//! a scalar-broadcast escape hatch, ReLU, pairwise squared Euclidean distance,
//! row-wise log-softmax, and mean negative log-likelihood — which keeps every
//! adjoint simple enough to verify against central finite differences.
//!
//! Values are 64-bit floats in row-major order. A graph is confined to one
//! thread while it is being built and differentiated; tensors themselves are
//! plain data and can move freely.

mod grad_check;

pub use grad_check::{grad_check, grad_check_coords};

use crate::error::{Error, Result};

/// Dense multi-dimensional float array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Whether backward should accumulate a gradient for this tensor.
    pub requires_grad: bool,
    /// Adjoint buffer, populated by backward. Same shape as `values`.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `values` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch {
                op: "from_rows",
                lhs: vec![rows.len()],
                rhs: vec![cols],
            });
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], values)
    }

    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Row count for 2-D tensors; 1 for vectors.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count for 2-D tensors; length for vectors.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Elementwise arithmetic selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Elementwise { kind: ElementwiseKind, a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Relu { a: NodeId },
    SqEuclidean { a: NodeId, b: NodeId },
    LogSoftmax { a: NodeId },
    NllLoss { log_probs: NodeId, targets: Vec<usize> },
    Sum { a: NodeId },
    Narrow { a: NodeId, start: usize },
    GroupMean { a: NodeId, labels: Vec<usize>, counts: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
}

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in execution order and the tape is acyclic by
/// construction: an op may only reference ids that already exist. Backward
/// visits nodes exactly once, in reverse insertion order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Inserts an input tensor as a leaf node.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf)
    }

    /// Leaf from raw parts.
    pub fn leaf_from(&mut self, shape: &[usize], values: &[f64], requires_grad: bool) -> Result<NodeId> {
        let t = Tensor::new(shape.to_vec(), values.to_vec())?.requires_grad(requires_grad);
        Ok(self.leaf(t))
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].tensor.values()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { tensor, op });
        id
    }

    fn push_result(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires = inputs.iter().any(|&i| self.nodes[i.0].tensor.requires_grad);
        let tensor = Tensor {
            shape,
            values,
            requires_grad: requires,
            grad: None,
        };
        self.push(tensor, op)
    }

    fn shape2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.tensor(id).shape();
        match s {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape2(a, "matmul")?;
        let (kb, n) = self.shape2(b, "matmul")?;
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.tensor(a).shape().to_vec(),
                rhs: self.tensor(b).shape().to_vec(),
            });
        }
        let out = matmul_raw(self.values(a), self.values(b), m, k, n);
        Ok(self.push_result(vec![m, n], out, Op::Matmul { a, b }, &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a, "transpose")?;
        let av = self.values(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        Ok(self.push_result(vec![n, m], out, Op::Transpose { a }, &[a]))
    }

    /// Elementwise arithmetic on identical shapes. The only permitted
    /// broadcast is scalar-by-tensor, on either side.
    pub fn elementwise(&mut self, a: NodeId, b: NodeId, kind: ElementwiseKind) -> Result<NodeId> {
        let (sa, sb) = (self.tensor(a).shape().to_vec(), self.tensor(b).shape().to_vec());
        let (na, nb) = (self.tensor(a).numel(), self.tensor(b).numel());
        if sa != sb && na != 1 && nb != 1 {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: sa,
                rhs: sb,
            });
        }
        let av = self.values(a);
        let bv = self.values(b);
        let numel = na.max(nb);
        let mut out = vec![0.0; numel];
        for i in 0..numel {
            let x = av[if na == 1 { 0 } else { i }];
            let y = bv[if nb == 1 { 0 } else { i }];
            out[i] = match kind {
                ElementwiseKind::Add => x + y,
                ElementwiseKind::Sub => x - y,
                ElementwiseKind::Mul => x * y,
            };
        }
        let shape = if na >= nb { sa } else { sb };
        Ok(self.push_result(shape, out, Op::Elementwise { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, ElementwiseKind::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, ElementwiseKind::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, ElementwiseKind::Mul)
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.leaf(Tensor::scalar(c));
        self.mul(a, s).expect("scalar broadcast is always valid")
    }

    /// Adds a length-n bias vector to every row of `a[m×n]`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a, "add_bias")?;
        if self.tensor(bias).numel() != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vec![m, n],
                rhs: self.tensor(bias).shape().to_vec(),
            });
        }
        let av = self.values(a);
        let bv = self.values(bias);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] + bv[j];
            }
        }
        Ok(self.push_result(vec![m, n], out, Op::AddBias { a, bias }, &[a, bias]))
    }

    /// max(0, x) elementwise. The subgradient at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.tensor(a).shape().to_vec();
        self.push_result(shape, out, Op::Relu { a }, &[a])
    }

    /// Pairwise squared Euclidean distances: `out[i][j] = Σ_t (a[i][t] − b[j][t])²`.
    pub fn sq_euclidean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, d) = self.shape2(a, "sq_euclidean")?;
        let (n, db) = self.shape2(b, "sq_euclidean")?;
        if d != db {
            return Err(Error::ShapeMismatch {
                op: "sq_euclidean",
                lhs: self.tensor(a).shape().to_vec(),
                rhs: self.tensor(b).shape().to_vec(),
            });
        }
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..d {
                    let diff = av[i * d + t] - bv[j * d + t];
                    s += diff * diff;
                }
                out[i * n + j] = s;
            }
        }
        Ok(self.push_result(vec![m, n], out, Op::SqEuclidean { a, b }, &[a, b]))
    }

    /// Row-wise log-softmax of `a[m×n]`, stabilized by max subtraction.
    /// Rows of the output exponentiate and sum to 1.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a, "log_softmax")?;
        let av = self.values(a);
        if av.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "log_softmax" });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        Ok(self.push_result(vec![m, n], out, Op::LogSoftmax { a }, &[a]))
    }

    /// Mean negative log-likelihood: `mean_i of −log_probs[i][targets[i]]`.
    pub fn nll_loss(&mut self, log_probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (m, n) = self.shape2(log_probs, "nll_loss")?;
        if targets.len() != m {
            return Err(Error::ShapeMismatch {
                op: "nll_loss",
                lhs: vec![m, n],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::TargetOutOfRange { index: bad, classes: n });
        }
        let lv = self.values(log_probs);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            total -= lv[i * n + t];
        }
        let loss = total / m as f64;
        Ok(self.push_result(
            vec![1],
            vec![loss],
            Op::NllLoss {
                log_probs,
                targets: targets.to_vec(),
            },
            &[log_probs],
        ))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.values(a).iter().sum();
        self.push_result(vec![1], vec![s], Op::Sum { a }, &[a])
    }

    /// Row-wise group means: `out[c] = mean of rows of a with label c`.
    /// Rows are summed in order and divided once per group, so the result is
    /// bit-identical to a naive per-group mean.
    pub fn group_mean(&mut self, a: NodeId, labels: &[usize], n_groups: usize) -> Result<NodeId> {
        let (m, d) = self.shape2(a, "group_mean")?;
        if labels.len() != m {
            return Err(Error::ShapeMismatch {
                op: "group_mean",
                lhs: vec![m, d],
                rhs: vec![labels.len()],
            });
        }
        let mut counts = vec![0usize; n_groups];
        for &l in labels {
            if l >= n_groups {
                return Err(Error::TargetOutOfRange {
                    index: l,
                    classes: n_groups,
                });
            }
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { index: empty });
        }
        let av = self.values(a);
        let mut out = vec![0.0; n_groups * d];
        for (j, &l) in labels.iter().enumerate() {
            for t in 0..d {
                out[l * d + t] += av[j * d + t];
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            for t in 0..d {
                out[c * d + t] /= count as f64;
            }
        }
        Ok(self.push_result(
            vec![n_groups, d],
            out,
            Op::GroupMean {
                a,
                labels: labels.to_vec(),
                counts,
            },
            &[a],
        ))
    }

    /// Contiguous sub-range of the flattened values of `a`, reinterpreted
    /// under `shape`. Gradients scatter back into the source range.
    pub fn narrow(&mut self, a: NodeId, start: usize, shape: Vec<usize>) -> Result<NodeId> {
        let len: usize = shape.iter().product();
        if start + len > self.tensor(a).numel() {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                lhs: self.tensor(a).shape().to_vec(),
                rhs: shape,
            });
        }
        let out = self.values(a)[start..start + len].to_vec();
        Ok(self.push_result(shape, out, Op::Narrow { a, start }, &[a]))
    }

    /// Clears every gradient buffer on the tape.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
    }

    /// Reverse pass from a scalar loss. Each call computes one full set of
    /// adjoints and adds it into the persistent `grad` buffers, so repeated
    /// backward without [`Graph::zero_grads`] accumulates.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.tensor(loss).is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.tensor(loss).shape().to_vec(),
            });
        }
        let mut scratch = Scratch {
            adjoints: vec![None; self.nodes.len()],
        };
        scratch.add(loss, &[1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = scratch.adjoints[idx].take() else {
                continue;
            };
            if self.nodes[idx].tensor.requires_grad {
                let op = self.nodes[idx].op.clone();
                self.propagate(NodeId(idx), &op, &grad, &mut scratch);
            }
            // Fold this pass's adjoint into the persistent buffer.
            let t = &mut self.nodes[idx].tensor;
            if t.requires_grad {
                let buf = t.grad.get_or_insert_with(|| vec![0.0; grad.len()]);
                for (b, g) in buf.iter_mut().zip(&grad) {
                    *b += g;
                }
            }
        }
        Ok(())
    }

    fn accum(&self, scratch: &mut Scratch, id: NodeId, delta: &[f64]) {
        if self.nodes[id.0].tensor.requires_grad {
            scratch.add(id, delta);
        }
    }

    fn accum_sum(&self, scratch: &mut Scratch, id: NodeId, delta: &[f64]) {
        let s: f64 = delta.iter().sum();
        self.accum(scratch, id, &[s]);
    }

    fn propagate(&self, out: NodeId, op: &Op, grad: &[f64], scratch: &mut Scratch) {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.tensor(a).shape()[0], self.tensor(a).shape()[1]);
                let n = self.tensor(b).shape()[1];
                if self.tensor(a).requires_grad {
                    // dA = g · Bᵀ
                    let bv = self.values(b);
                    let mut bt = vec![0.0; n * k];
                    for i in 0..k {
                        for j in 0..n {
                            bt[j * k + i] = bv[i * n + j];
                        }
                    }
                    let da = matmul_raw(grad, &bt, m, n, k);
                    self.accum(scratch, a, &da);
                }
                if self.tensor(b).requires_grad {
                    // dB = Aᵀ · g
                    let av = self.values(a);
                    let mut at = vec![0.0; k * m];
                    for i in 0..m {
                        for j in 0..k {
                            at[j * m + i] = av[i * k + j];
                        }
                    }
                    let db = matmul_raw(&at, grad, k, m, n);
                    self.accum(scratch, b, &db);
                }
            }
            Op::Transpose { a } => {
                let (n, m) = (self.tensor(out).shape()[0], self.tensor(out).shape()[1]);
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = grad[i * m + j];
                    }
                }
                self.accum(scratch, a, &da);
            }
            Op::Elementwise { kind, a, b } => {
                let na = self.tensor(a).numel();
                let nb = self.tensor(b).numel();
                match kind {
                    ElementwiseKind::Add => {
                        if na == 1 && grad.len() > 1 {
                            self.accum_sum(scratch, a, grad);
                        } else {
                            self.accum(scratch, a, grad);
                        }
                        if nb == 1 && grad.len() > 1 {
                            self.accum_sum(scratch, b, grad);
                        } else {
                            self.accum(scratch, b, grad);
                        }
                    }
                    ElementwiseKind::Sub => {
                        if na == 1 && grad.len() > 1 {
                            self.accum_sum(scratch, a, grad);
                        } else {
                            self.accum(scratch, a, grad);
                        }
                        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                        if nb == 1 && grad.len() > 1 {
                            self.accum_sum(scratch, b, &neg);
                        } else {
                            self.accum(scratch, b, &neg);
                        }
                    }
                    ElementwiseKind::Mul => {
                        if self.tensor(a).requires_grad {
                            let bv = self.values(b);
                            let da: Vec<f64> = grad
                                .iter()
                                .enumerate()
                                .map(|(i, g)| g * bv[if nb == 1 { 0 } else { i }])
                                .collect();
                            if na == 1 && grad.len() > 1 {
                                self.accum_sum(scratch, a, &da);
                            } else {
                                self.accum(scratch, a, &da);
                            }
                        }
                        if self.tensor(b).requires_grad {
                            let av = self.values(a);
                            let db: Vec<f64> = grad
                                .iter()
                                .enumerate()
                                .map(|(i, g)| g * av[if na == 1 { 0 } else { i }])
                                .collect();
                            if nb == 1 && grad.len() > 1 {
                                self.accum_sum(scratch, b, &db);
                            } else {
                                self.accum(scratch, b, &db);
                            }
                        }
                    }
                }
            }
            Op::AddBias { a, bias } => {
                let (m, n) = (self.tensor(out).shape()[0], self.tensor(out).shape()[1]);
                self.accum(scratch, a, grad);
                if self.tensor(bias).requires_grad {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += grad[i * n + j];
                        }
                    }
                    self.accum(scratch, bias, &db);
                }
            }
            Op::Relu { a } => {
                let av = self.values(a);
                let da: Vec<f64> = grad
                    .iter()
                    .zip(av)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accum(scratch, a, &da);
            }
            Op::SqEuclidean { a, b } => {
                let (m, d) = (self.tensor(a).shape()[0], self.tensor(a).shape()[1]);
                let n = self.tensor(b).shape()[0];
                let av = self.values(a).to_vec();
                let bv = self.values(b).to_vec();
                if self.tensor(a).requires_grad {
                    let mut da = vec![0.0; m * d];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            for t in 0..d {
                                da[i * d + t] += 2.0 * g * (av[i * d + t] - bv[j * d + t]);
                            }
                        }
                    }
                    self.accum(scratch, a, &da);
                }
                if self.tensor(b).requires_grad {
                    let mut db = vec![0.0; n * d];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            for t in 0..d {
                                db[j * d + t] += 2.0 * g * (bv[j * d + t] - av[i * d + t]);
                            }
                        }
                    }
                    self.accum(scratch, b, &db);
                }
            }
            Op::LogSoftmax { a } => {
                let (m, n) = (self.tensor(out).shape()[0], self.tensor(out).shape()[1]);
                let yv = self.values(out);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let row_sum: f64 = grad[i * n..(i + 1) * n].iter().sum();
                    for j in 0..n {
                        da[i * n + j] = grad[i * n + j] - yv[i * n + j].exp() * row_sum;
                    }
                }
                self.accum(scratch, a, &da);
            }
            Op::NllLoss { log_probs, ref targets } => {
                let n = self.tensor(log_probs).shape()[1];
                let m = targets.len();
                let g = grad[0];
                let mut da = vec![0.0; m * n];
                for (i, &t) in targets.iter().enumerate() {
                    da[i * n + t] = -g / m as f64;
                }
                self.accum(scratch, log_probs, &da);
            }
            Op::Sum { a } => {
                let da = vec![grad[0]; self.tensor(a).numel()];
                self.accum(scratch, a, &da);
            }
            Op::Narrow { a, start } => {
                let mut da = vec![0.0; self.tensor(a).numel()];
                da[start..start + grad.len()].copy_from_slice(grad);
                self.accum(scratch, a, &da);
            }
            Op::GroupMean {
                a,
                ref labels,
                ref counts,
            } => {
                let d = self.tensor(out).shape()[1];
                let mut da = vec![0.0; self.tensor(a).numel()];
                for (j, &l) in labels.iter().enumerate() {
                    for t in 0..d {
                        da[j * d + t] = grad[l * d + t] / counts[l] as f64;
                    }
                }
                self.accum(scratch, a, &da);
            }
        }
    }
}

/// Per-backward adjoint buffers, one optional slot per node.
struct Scratch {
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Scratch {
    fn add(&mut self, id: NodeId, delta: &[f64]) {
        let buf = self.adjoints[id.0].get_or_insert_with(|| vec![0.0; delta.len()]);
        for (b, d) in buf.iter_mut().zip(delta) {
            *b += d;
        }
    }
}

/// Row-major `a[m×k] · b[k×n]`.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        let values: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), values).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = g.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let out = g.matmul(eye, a).unwrap();
        assert_eq!(g.values(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_orthogonal_vectors() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let b = g.leaf(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.values(out), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 3]));
        let b = g.leaf(Tensor::zeros(vec![4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);

        let b2 = b.clone();
        let err_a = grad_check(
            &|g, x| {
                let bb = g.leaf(b2.clone());
                let mm = g.matmul(x, bb)?;
                Ok(g.sum(mm))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err_a < 1e-5, "matmul grad wrt a: {err_a}");

        let a2 = a.clone();
        let err_b = grad_check(
            &|g, x| {
                let aa = g.leaf(a2.clone());
                let mm = g.matmul(aa, x)?;
                Ok(g.sum(mm))
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err_b < 1e-5, "matmul grad wrt b: {err_b}");
    }

    #[test]
    fn elementwise_add_and_zero_mul() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let sum = g.add(a, b).unwrap();
        assert_eq!(g.values(sum), &[4.0, 6.0]);

        let x = g.leaf(Tensor::new(vec![2], vec![5.0, -7.0]).unwrap().requires_grad(true));
        let zero = g.leaf(Tensor::scalar(0.0));
        let prod = g.mul(x, zero).unwrap();
        assert_eq!(g.values(prod), &[0.0, 0.0]);
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn elementwise_shape_error() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 2]));
        let b = g.leaf(Tensor::zeros(vec![3]));
        assert!(g.sub(a, b).is_err());
    }

    #[test]
    fn sub_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, &[3, 3]);
        let b = rand_tensor(&mut rng, &[3, 3]);
        let b2 = b.clone();
        let err = grad_check(
            &|g, x| {
                let bb = g.leaf(b2.clone());
                let d = g.sub(x, bb)?;
                let sq = g.mul(d, d)?;
                Ok(g.sum(sq))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "sub grad: {err}");
    }

    #[test]
    fn scalar_broadcast_gradients() {
        // d/dc sum(x * c) = sum(x); checked on the scalar side of the broadcast.
        let x = Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap();
        let c = Tensor::scalar(0.7);
        let err = grad_check(
            &|g, s| {
                let xx = g.leaf(x.clone());
                let p = g.mul(xx, s)?;
                Ok(g.sum(p))
            },
            &c,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "scalar broadcast grad: {err}");
    }

    #[test]
    fn relu_basic_and_all_negative() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(a);
        assert_eq!(g.values(r), &[0.0, 0.0, 2.0]);

        let x = g.leaf(Tensor::new(vec![2], vec![-3.0, -0.5]).unwrap().requires_grad(true));
        let r2 = g.relu(x);
        assert_eq!(g.values(r2), &[0.0, 0.0]);
        let loss = g.sum(r2);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_gradient_is_indicator_mask() {
        // Points away from the origin; relu is non-differentiable at 0.
        let x = Tensor::new(vec![4], vec![-1.2, 0.8, -0.3, 2.5]).unwrap();
        let err = grad_check(
            &|g, a| {
                let r = g.relu(a);
                Ok(g.sum(r))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "relu grad: {err}");
    }

    #[test]
    fn sq_euclidean_self_and_pythagoras() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let d = g.sq_euclidean(a, a).unwrap();
        assert_eq!(g.values(d), &[0.0]);

        let p = g.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let q = g.leaf(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let d2 = g.sq_euclidean(p, q).unwrap();
        assert_eq!(g.values(d2), &[25.0]);
    }

    #[test]
    fn sq_euclidean_matches_loop_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[4, 8]);
        let b = rand_tensor(&mut rng, &[3, 8]);
        let mut g = Graph::new();
        let na = g.leaf(a.clone());
        let nb = g.leaf(b.clone());
        let d = g.sq_euclidean(na, nb).unwrap();

        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for t in 0..8 {
                    let diff = a.values()[i * 8 + t] - b.values()[j * 8 + t];
                    s += diff * diff;
                }
                assert_eq!(g.values(d)[i * 3 + j], s);
            }
        }
    }

    #[test]
    fn sq_euclidean_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_tensor(&mut rng, &[2, 5]);
        let b = rand_tensor(&mut rng, &[3, 5]);
        let b2 = b.clone();
        let err = grad_check(
            &|g, x| {
                let bb = g.leaf(b2.clone());
                let d = g.sq_euclidean(x, bb)?;
                Ok(g.sum(d))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "sq_euclidean grad wrt a: {err}");

        let a2 = a.clone();
        let err_b = grad_check(
            &|g, x| {
                let aa = g.leaf(a2.clone());
                let d = g.sq_euclidean(aa, x)?;
                Ok(g.sum(d))
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err_b < 1e-5, "sq_euclidean grad wrt b: {err_b}");
    }

    #[test]
    fn log_softmax_symmetry_and_stability() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let l = g.log_softmax(a).unwrap();
        let ln2 = 2.0_f64.ln();
        assert!((g.values(l)[0] + ln2).abs() < 1e-12);
        assert!((g.values(l)[1] + ln2).abs() < 1e-12);

        let big = g.leaf(Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        let lb = g.log_softmax(big).unwrap();
        assert!(g.values(lb).iter().all(|v| v.is_finite()));
        assert!(g.values(lb)[0].abs() < 1e-9);
        assert!((g.values(lb)[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_hand_value() {
        // softmax(0, -4): first entry 1/(1+e^-4).
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![0.0, -4.0]]).unwrap());
        let l = g.log_softmax(a).unwrap();
        let expected = 1.0 / (1.0 + (-4.0_f64).exp());
        assert!((g.values(l)[0].exp() - expected).abs() < 1e-12);
        assert!((expected - 0.98201).abs() < 1e-5);
    }

    #[test]
    fn log_softmax_rejects_nan() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap());
        assert!(matches!(g.log_softmax(a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn log_softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let err = grad_check(
            &|g, x| {
                let l = g.log_softmax(x)?;
                // Weighted sum so the row-sum term of the adjoint is exercised.
                let w = g.leaf(Tensor::new(vec![3, 4], (0..12).map(|i| 0.1 * i as f64).collect()).unwrap());
                let p = g.mul(l, w)?;
                Ok(g.sum(p))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "log_softmax grad: {err}");
    }

    #[test]
    fn nll_loss_perfect_uniform_and_random() {
        let mut g = Graph::new();
        // Perfect prediction: log prob 0 at the target.
        let perfect = g.leaf(Tensor::from_rows(&[vec![0.0, -50.0], vec![-50.0, 0.0]]).unwrap());
        let l = g.nll_loss(perfect, &[0, 1]).unwrap();
        assert_eq!(g.values(l), &[0.0]);

        // Uniform over n classes: loss ln n.
        let n = 4;
        let row = vec![-(n as f64).ln(); n];
        let uni = g.leaf(Tensor::from_rows(&[row.clone(), row]).unwrap());
        let lu = g.nll_loss(uni, &[2, 0]).unwrap();
        assert!((g.values(lu)[0] - (n as f64).ln()).abs() < 1e-12);

        // Random instance against a hand-computed mean.
        let rows = [vec![-0.2, -1.7, -3.0], vec![-2.1, -0.4, -1.2]];
        let targets = [2usize, 1usize];
        let expected = ((3.0) + (0.4)) / 2.0;
        let r = g.leaf(Tensor::from_rows(&rows).unwrap());
        let lr = g.nll_loss(r, &targets).unwrap();
        assert!((g.values(lr)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn nll_loss_target_out_of_range() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::zeros(vec![1, 2]));
        assert!(matches!(
            g.nll_loss(p, &[2]),
            Err(Error::TargetOutOfRange { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 3]).requires_grad(true));
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_half_square_norm_gives_x() {
        let mut g = Graph::new();
        let vals = vec![1.0, -2.0, 0.5, 3.0];
        let x = g.leaf(Tensor::new(vec![4], vals.clone()).unwrap().requires_grad(true));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5);
        g.backward(loss).unwrap();
        for (gi, xi) in g.grad(x).unwrap().iter().zip(&vals) {
            assert!((gi - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2]).requires_grad(true));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn repeated_backward_accumulates_and_zeroing_restores() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![2.0, -1.0]).unwrap().requires_grad(true));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        let first = g.grad(x).unwrap().to_vec();
        g.backward(loss).unwrap();
        let doubled = g.grad(x).unwrap().to_vec();
        for (d, f) in doubled.iter().zip(&first) {
            assert_eq!(*d, 2.0 * f);
        }
        g.zero_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), first.as_slice());
    }

    #[test]
    fn narrow_routes_gradients_into_source_range() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![6], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().requires_grad(true));
        let mid = g.narrow(x, 2, vec![1, 3]).unwrap();
        assert_eq!(g.values(mid), &[2.0, 3.0, 4.0]);
        let sq = g.mul(mid, mid).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 4.0, 6.0, 8.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn sq_euclidean_swap_is_transpose(seed in 0u64..500, m in 1usize..5, n in 1usize..5, d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, &[m, d]);
            let b = rand_tensor(&mut rng, &[n, d]);
            let mut g = Graph::new();
            let na = g.leaf(a);
            let nb = g.leaf(b);
            let ab = g.sq_euclidean(na, nb).unwrap();
            let ba = g.sq_euclidean(nb, na).unwrap();
            for i in 0..m {
                for j in 0..n {
                    prop_assert_eq!(g.values(ab)[i * n + j], g.values(ba)[j * m + i]);
                }
            }
        }

        #[test]
        fn log_softmax_rows_normalize(seed in 0u64..500, m in 1usize..5, n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let numel = m * n;
            let values: Vec<f64> = (0..numel).map(|_| rng.random_range(-30.0..30.0)).collect();
            let mut g = Graph::new();
            let a = g.leaf(Tensor::new(vec![m, n], values).unwrap());
            let l = g.log_softmax(a).unwrap();
            for i in 0..m {
                let s: f64 = g.values(l)[i * n..(i + 1) * n].iter().map(|v| v.exp()).sum();
                prop_assert!((s - 1.0).abs() < 1e-9, "row sum {}", s);
            }
        }
    }
}
