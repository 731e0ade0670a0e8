//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`ComputeGraph`] records one forward pass as an ordered list of nodes;
//! list order is topological by construction because an operation can only
//! consume node ids that already exist. [`ComputeGraph::backward`] walks the
//! tape once in reverse and deposits gradients into every leaf tensor that
//! was registered with `requires_grad`.
//!
//! Values are computed eagerly when an operation is recorded, so a graph also
//! doubles as plain tensor arithmetic: constants flow through without any
//! gradient bookkeeping.

use crate::rng::Rng;
use crate::tensor::{contract_error, Tensor, TensorError};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Row-wise boolean mask for `softmax-over-neighbors`: entry `(i, j)` marks
/// column `j` as a neighbor of row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
    /// When set, a row with no unmasked entries yields an all-zero output row
    /// instead of a degenerate-input error. Graph layers use this for
    /// isolated nodes; the default contract is strict.
    pub allow_empty_rows: bool,
}

impl NeighborMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self, TensorError> {
        if allowed.len() != rows * cols {
            return Err(TensorError::BadShape { op: "neighbor-mask", shape: vec![rows, cols], len: allowed.len() });
        }
        Ok(NeighborMask { rows, cols, allowed, allow_empty_rows: false })
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        NeighborMask { rows, cols, allowed: vec![true; rows * cols], allow_empty_rows: false }
    }

    pub fn lenient(mut self) -> Self {
        self.allow_empty_rows = true;
        self
    }

    fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }
}

/// Operation kinds understood by [`ComputeGraph::evaluate`].
#[derive(Clone, Debug)]
pub enum OpKind {
    /// `[m x k] . [k x n] -> [m x n]`
    MatMul,
    /// Elementwise sum; the right operand may be a `[1 x c]` row broadcast
    /// over the left operand's rows (bias addition).
    Add,
    /// `[n x a] ++ [n x b] -> [n x (a+b)]`
    ConcatLastAxis,
    /// `[a x c]` stacked on `[b x c] -> [(a+b) x c]`
    ConcatRows,
    /// Elementwise product of same-shape tensors.
    Hadamard,
    /// `(gate, x, y) -> gate*x + (1-gate)*y`; the gate is either `[n x 1]`
    /// (one scalar per row) or the full `[n x c]` shape (elementwise).
    ScalarMix,
    Sigmoid,
    LeakyRelu { slope: f64 },
    Relu,
    /// Masked row softmax; masked-out entries are exactly zero.
    SoftmaxOverNeighbors { mask: NeighborMask },
    /// `[n x c] -> [1 x c]` mean over rows.
    MeanRows,
    /// Inverted dropout: keeps an entry with probability `1 - rate` and
    /// scales it by `1/(1-rate)`. Identity when `train` is false or `rate`
    /// is zero. The mask is a pure function of `seed`.
    Dropout { rate: f64, seed: u64, train: bool },
    /// Multiplication by a constant.
    Scale { factor: f64 },
    Transpose,
    /// Rows `start..end`.
    SliceRows { start: usize, end: usize },
    /// Columns `start..end`.
    SliceCols { start: usize, end: usize },
    /// Row lookup into a `[v x c]` table; gradient scatter-adds.
    GatherRows { ids: Vec<usize> },
    /// Sum of all entries, `-> [1 x 1]`.
    SumAll,
    /// Negative log of the total softmax probability mass on `gold`
    /// positions: `-ln(sum_{g in gold} softmax(scores)_g) -> [1 x 1]`.
    MarginalNll { gold: Vec<usize> },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::ConcatLastAxis => "concat-last-axis",
            OpKind::ConcatRows => "concat-rows",
            OpKind::Hadamard => "hadamard",
            OpKind::ScalarMix => "scalar-mix",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LeakyRelu { .. } => "leaky-relu",
            OpKind::Relu => "relu",
            OpKind::SoftmaxOverNeighbors { .. } => "softmax-over-neighbors",
            OpKind::MeanRows => "mean-rows",
            OpKind::Dropout { .. } => "dropout",
            OpKind::Scale { .. } => "scale",
            OpKind::Transpose => "transpose",
            OpKind::SliceRows { .. } => "slice-rows",
            OpKind::SliceCols { .. } => "slice-cols",
            OpKind::GatherRows { .. } => "gather-rows",
            OpKind::SumAll => "sum-all",
            OpKind::MarginalNll { .. } => "marginal-nll",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::ConcatLastAxis
            | OpKind::ConcatRows
            | OpKind::Hadamard => 2,
            OpKind::ScalarMix => 3,
            _ => 1,
        }
    }
}

struct Node {
    tensor: Tensor,
    kind: Option<OpKind>,
    inputs: Vec<NodeId>,
    needs_grad: bool,
    tags: Vec<&'static str>,
}

/// The recorded forward pass. Confined to one thread for its lifetime.
#[derive(Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl ComputeGraph {
    pub fn new() -> Self {
        ComputeGraph { nodes: Vec::new(), consumed: false }
    }

    /// Registers a leaf. Gradient flows into it iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor) -> NodeId {
        let needs_grad = tensor.requires_grad();
        self.push(Node { tensor, kind: None, inputs: Vec::new(), needs_grad, tags: Vec::new() })
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push(Node { tensor, kind: None, inputs: Vec::new(), needs_grad: false, tags: Vec::new() })
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient of the last `backward` loss w.r.t. a leaf, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attaches a diagnostic label; a node may carry several.
    pub fn tag(&mut self, id: NodeId, label: &'static str) {
        self.nodes[id.0].tags.push(label);
    }

    /// Values of every node carrying `label`, in recording order.
    pub fn tagged_values(&self, label: &str) -> Vec<&Tensor> {
        self.nodes
            .iter()
            .filter(|n| n.tags.iter().any(|t| *t == label))
            .map(|n| &n.tensor)
            .collect()
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Records one operation, computing its value eagerly.
    pub fn evaluate(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        if self.consumed {
            return Err(contract_error("compute graph already consumed by backward"));
        }
        if inputs.len() != kind.arity() {
            return Err(contract_error(format!(
                "{} expects {} inputs, got {}",
                kind.name(),
                kind.arity(),
                inputs.len()
            )));
        }
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].tensor).collect();
        let out = compute(&kind, &tensors)?;
        out.check_finite(kind.name())?;
        let needs_grad = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        Ok(self.push(Node { tensor: out, kind: Some(kind), inputs: inputs.to_vec(), needs_grad, tags: Vec::new() }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Add, &[a, b])
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::ConcatLastAxis, &[a, b])
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::ConcatRows, &[a, b])
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Hadamard, &[a, b])
    }

    pub fn mix(&mut self, gate: NodeId, x: NodeId, y: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::ScalarMix, &[gate, x, y])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Sigmoid, &[x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::LeakyRelu { slope }, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Relu, &[x])
    }

    pub fn softmax_neighbors(&mut self, x: NodeId, mask: NeighborMask) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::SoftmaxOverNeighbors { mask }, &[x])
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::MeanRows, &[x])
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64, train: bool) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Dropout { rate, seed, train }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Scale { factor }, &[x])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::Transpose, &[x])
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::SliceRows { start, end }, &[x])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::SliceCols { start, end }, &[x])
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::GatherRows { ids }, &[table])
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::SumAll, &[x])
    }

    pub fn marginal_nll(&mut self, scores: NodeId, gold: Vec<usize>) -> Result<NodeId, TensorError> {
        self.evaluate(OpKind::MarginalNll { gold }, &[scores])
    }

    /// Reverse sweep from a scalar loss. Visits every node at most once, in
    /// reverse recording order, then writes gradients into each
    /// `requires_grad` leaf. The graph is consumed: no further operations or
    /// backward passes are accepted.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.consumed {
            return Err(contract_error("compute graph already consumed by backward"));
        }
        if !self.nodes[loss.0].tensor.is_scalar() {
            return Err(contract_error(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].tensor.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(out_grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.kind {
                None => {
                    if node.tensor.requires_grad() {
                        self.nodes[idx].tensor.set_grad(Some(out_grad));
                    }
                }
                Some(kind) => {
                    let kind = kind.clone();
                    let inputs = node.inputs.clone();
                    let in_tensors: Vec<&Tensor> =
                        inputs.iter().map(|id| &self.nodes[id.0].tensor).collect();
                    let in_grads =
                        backprop(&kind, &in_tensors, &self.nodes[idx].tensor, &out_grad)?;
                    for (input, grad) in inputs.iter().zip(in_grads) {
                        if !self.nodes[input.0].needs_grad {
                            continue;
                        }
                        let slot = grads[input.0]
                            .get_or_insert_with(|| vec![0.0; self.nodes[input.0].tensor.len()]);
                        for (s, g) in slot.iter_mut().zip(&grad) {
                            *s += g;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn matmul_raw(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
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

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.uniform() >= rate { keep_scale } else { 0.0 }).collect()
}

fn compute(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims();
            let (k2, n) = b.dims();
            if k != k2 {
                return Err(mismatch("matmul", a, b));
            }
            Tensor::matrix(m, n, matmul_raw(a.values(), m, k, b.values(), n))
        }
        OpKind::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ar, ac) = a.dims();
            let (br, bc) = b.dims();
            if ac != bc || (ar != br && br != 1) {
                return Err(mismatch("add", a, b));
            }
            let mut out = a.values().to_vec();
            for i in 0..ar {
                let bi = if br == 1 { 0 } else { i };
                for j in 0..ac {
                    out[i * ac + j] += b.values()[bi * bc + j];
                }
            }
            Tensor::matrix(ar, ac, out)
        }
        OpKind::ConcatLastAxis => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ar, ac) = a.dims();
            let (br, bc) = b.dims();
            if ar != br {
                return Err(mismatch("concat-last-axis", a, b));
            }
            let mut out = Vec::with_capacity(ar * (ac + bc));
            for i in 0..ar {
                out.extend_from_slice(&a.values()[i * ac..(i + 1) * ac]);
                out.extend_from_slice(&b.values()[i * bc..(i + 1) * bc]);
            }
            Tensor::matrix(ar, ac + bc, out)
        }
        OpKind::ConcatRows => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ar, ac) = a.dims();
            let (br, bc) = b.dims();
            if ac != bc {
                return Err(mismatch("concat-rows", a, b));
            }
            let mut out = a.values().to_vec();
            out.extend_from_slice(b.values());
            Tensor::matrix(ar + br, ac, out)
        }
        OpKind::Hadamard => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.dims() != b.dims() {
                return Err(mismatch("hadamard", a, b));
            }
            let out = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
            Tensor::matrix(a.rows(), a.cols(), out)
        }
        OpKind::ScalarMix => {
            let (g, x, y) = (inputs[0], inputs[1], inputs[2]);
            if x.dims() != y.dims() {
                return Err(mismatch("scalar-mix", x, y));
            }
            let (r, c) = x.dims();
            let per_row = match g.dims() {
                (gr, 1) if gr == r => true,
                (gr, gc) if gr == r && gc == c => false,
                _ => return Err(mismatch("scalar-mix", g, x)),
            };
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    let gv = if per_row { g.values()[i] } else { g.values()[i * c + j] };
                    out[i * c + j] = gv * x.values()[i * c + j] + (1.0 - gv) * y.values()[i * c + j];
                }
            }
            Tensor::matrix(r, c, out)
        }
        OpKind::Sigmoid => {
            let x = inputs[0];
            let out = x.values().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            Tensor::matrix(x.rows(), x.cols(), out)
        }
        OpKind::LeakyRelu { slope } => {
            let x = inputs[0];
            let out = x.values().iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
            Tensor::matrix(x.rows(), x.cols(), out)
        }
        OpKind::Relu => {
            let x = inputs[0];
            let out = x.values().iter().map(|&v| v.max(0.0)).collect();
            Tensor::matrix(x.rows(), x.cols(), out)
        }
        OpKind::SoftmaxOverNeighbors { mask } => {
            let x = inputs[0];
            let (r, c) = x.dims();
            if (mask.rows, mask.cols) != (r, c) {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax-over-neighbors",
                    lhs: x.shape().to_vec(),
                    rhs: vec![mask.rows, mask.cols],
                });
            }
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                let row = &x.values()[i * c..(i + 1) * c];
                let mut max = f64::NEG_INFINITY;
                for j in 0..c {
                    if mask.is_allowed(i, j) {
                        max = max.max(row[j]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    if mask.allow_empty_rows {
                        continue;
                    }
                    return Err(TensorError::DegenerateSoftmax { row: i });
                }
                let mut z = 0.0;
                for j in 0..c {
                    if mask.is_allowed(i, j) {
                        let e = (row[j] - max).exp();
                        out[i * c + j] = e;
                        z += e;
                    }
                }
                for j in 0..c {
                    out[i * c + j] /= z;
                }
            }
            Tensor::matrix(r, c, out)
        }
        OpKind::MeanRows => {
            let x = inputs[0];
            let (r, c) = x.dims();
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += x.values()[i * c + j];
                }
            }
            for v in &mut out {
                *v /= r as f64;
            }
            Tensor::matrix(1, c, out)
        }
        OpKind::Dropout { rate, seed, train } => {
            let x = inputs[0];
            if !(0.0..1.0).contains(rate) {
                return Err(contract_error(format!("dropout rate {rate} outside [0, 1)")));
            }
            if !train || *rate == 0.0 {
                return Ok(x.clone_detached());
            }
            let mask = dropout_mask(x.len(), *rate, *seed);
            let out = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Tensor::matrix(x.rows(), x.cols(), out)
        }
        OpKind::Scale { factor } => {
            let x = inputs[0];
            let out = x.values().iter().map(|v| v * factor).collect();
            Tensor::matrix(x.rows(), x.cols(), out)
        }
        OpKind::Transpose => {
            let x = inputs[0];
            let (r, c) = x.dims();
            Tensor::matrix(c, r, transpose_raw(x.values(), r, c))
        }
        OpKind::SliceRows { start, end } => {
            let x = inputs[0];
            let (r, c) = x.dims();
            if *start >= *end || *end > r {
                return Err(contract_error(format!("slice-rows {start}..{end} out of range for {r} rows")));
            }
            Tensor::matrix(end - start, c, x.values()[start * c..end * c].to_vec())
        }
        OpKind::SliceCols { start, end } => {
            let x = inputs[0];
            let (r, c) = x.dims();
            if *start >= *end || *end > c {
                return Err(contract_error(format!("slice-cols {start}..{end} out of range for {c} columns")));
            }
            let mut out = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                out.extend_from_slice(&x.values()[i * c + start..i * c + end]);
            }
            Tensor::matrix(r, end - start, out)
        }
        OpKind::GatherRows { ids } => {
            let x = inputs[0];
            let (r, c) = x.dims();
            if ids.is_empty() {
                return Err(contract_error("gather-rows requires at least one id"));
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= r) {
                return Err(contract_error(format!("gather-rows id {bad} out of range for {r} rows")));
            }
            let mut out = Vec::with_capacity(ids.len() * c);
            for &i in ids {
                out.extend_from_slice(&x.values()[i * c..(i + 1) * c]);
            }
            Tensor::matrix(ids.len(), c, out)
        }
        OpKind::SumAll => {
            let x = inputs[0];
            Ok(Tensor::scalar(x.values().iter().sum()))
        }
        OpKind::MarginalNll { gold } => {
            let x = inputs[0];
            let n = x.len();
            if gold.is_empty() {
                return Err(contract_error("marginal-nll requires at least one gold position"));
            }
            if let Some(bad) = gold.iter().find(|&&g| g >= n) {
                return Err(contract_error(format!("marginal-nll gold position {bad} out of range for {n} scores")));
            }
            let p = softmax_flat(x.values());
            let mass: f64 = gold.iter().map(|&g| p[g]).sum();
            Ok(Tensor::scalar(-mass.ln()))
        }
    }
}

fn softmax_flat(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl Tensor {
    fn clone_detached(&self) -> Tensor {
        Tensor::matrix(self.rows(), self.cols(), self.values().to_vec())
            .expect("detached clone of a valid tensor")
    }
}

/// Gradients of one operation w.r.t. each input, given the upstream gradient.
fn backprop(
    kind: &OpKind,
    inputs: &[&Tensor],
    output: &Tensor,
    out_grad: &[f64],
) -> Result<Vec<Vec<f64>>, TensorError> {
    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims();
            let n = b.cols();
            let bt = transpose_raw(b.values(), k, n);
            let da = matmul_raw(out_grad, m, n, &bt, k);
            let at = transpose_raw(a.values(), m, k);
            let db = matmul_raw(&at, k, m, out_grad, n);
            Ok(vec![da, db])
        }
        OpKind::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ar, ac) = a.dims();
            let da = out_grad.to_vec();
            if b.rows() == 1 && ar != 1 {
                let mut db = vec![0.0; ac];
                for i in 0..ar {
                    for j in 0..ac {
                        db[j] += out_grad[i * ac + j];
                    }
                }
                Ok(vec![da, db])
            } else {
                Ok(vec![da, out_grad.to_vec()])
            }
        }
        OpKind::ConcatLastAxis => {
            let (a, b) = (inputs[0], inputs[1]);
            let (r, ac) = a.dims();
            let bc = b.cols();
            let total = ac + bc;
            let mut da = vec![0.0; r * ac];
            let mut db = vec![0.0; r * bc];
            for i in 0..r {
                da[i * ac..(i + 1) * ac].copy_from_slice(&out_grad[i * total..i * total + ac]);
                db[i * bc..(i + 1) * bc].copy_from_slice(&out_grad[i * total + ac..(i + 1) * total]);
            }
            Ok(vec![da, db])
        }
        OpKind::ConcatRows => {
            let a_len = inputs[0].len();
            Ok(vec![out_grad[..a_len].to_vec(), out_grad[a_len..].to_vec()])
        }
        OpKind::Hadamard => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = b.values().iter().zip(out_grad).map(|(y, g)| y * g).collect();
            let db = a.values().iter().zip(out_grad).map(|(x, g)| x * g).collect();
            Ok(vec![da, db])
        }
        OpKind::ScalarMix => {
            let (g, x, y) = (inputs[0], inputs[1], inputs[2]);
            let (r, c) = x.dims();
            let per_row = g.cols() == 1 && c != 1;
            let mut dg = vec![0.0; g.len()];
            let mut dx = vec![0.0; x.len()];
            let mut dy = vec![0.0; y.len()];
            for i in 0..r {
                for j in 0..c {
                    let idx = i * c + j;
                    let gv = if per_row { g.values()[i] } else { g.values()[idx] };
                    let diff = x.values()[idx] - y.values()[idx];
                    if per_row {
                        dg[i] += diff * out_grad[idx];
                    } else {
                        dg[idx] = diff * out_grad[idx];
                    }
                    dx[idx] = gv * out_grad[idx];
                    dy[idx] = (1.0 - gv) * out_grad[idx];
                }
            }
            Ok(vec![dg, dx, dy])
        }
        OpKind::Sigmoid => {
            let ds = output
                .values()
                .iter()
                .zip(out_grad)
                .map(|(s, g)| s * (1.0 - s) * g)
                .collect();
            Ok(vec![ds])
        }
        OpKind::LeakyRelu { slope } => {
            let dx = inputs[0]
                .values()
                .iter()
                .zip(out_grad)
                .map(|(&x, g)| if x >= 0.0 { *g } else { slope * g })
                .collect();
            Ok(vec![dx])
        }
        OpKind::Relu => {
            let dx = inputs[0]
                .values()
                .iter()
                .zip(out_grad)
                .map(|(&x, g)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            Ok(vec![dx])
        }
        OpKind::SoftmaxOverNeighbors { mask } => {
            let (r, c) = inputs[0].dims();
            let alpha = output.values();
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                let mut dot = 0.0;
                for j in 0..c {
                    dot += alpha[i * c + j] * out_grad[i * c + j];
                }
                for j in 0..c {
                    if mask.is_allowed(i, j) {
                        let idx = i * c + j;
                        dx[idx] = alpha[idx] * (out_grad[idx] - dot);
                    }
                }
            }
            Ok(vec![dx])
        }
        OpKind::MeanRows => {
            let (r, c) = inputs[0].dims();
            let inv = 1.0 / r as f64;
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = out_grad[j] * inv;
                }
            }
            Ok(vec![dx])
        }
        OpKind::Dropout { rate, seed, train } => {
            if !train || *rate == 0.0 {
                return Ok(vec![out_grad.to_vec()]);
            }
            let mask = dropout_mask(inputs[0].len(), *rate, *seed);
            Ok(vec![mask.iter().zip(out_grad).map(|(m, g)| m * g).collect()])
        }
        OpKind::Scale { factor } => Ok(vec![out_grad.iter().map(|g| g * factor).collect()]),
        OpKind::Transpose => {
            let (r, c) = inputs[0].dims();
            Ok(vec![transpose_raw(out_grad, c, r)])
        }
        OpKind::SliceRows { start, end } => {
            let (r, c) = inputs[0].dims();
            let mut dx = vec![0.0; r * c];
            dx[start * c..end * c].copy_from_slice(out_grad);
            Ok(vec![dx])
        }
        OpKind::SliceCols { start, end } => {
            let (r, c) = inputs[0].dims();
            let width = end - start;
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                dx[i * c + start..i * c + end].copy_from_slice(&out_grad[i * width..(i + 1) * width]);
            }
            Ok(vec![dx])
        }
        OpKind::GatherRows { ids } => {
            let (r, c) = inputs[0].dims();
            let mut dx = vec![0.0; r * c];
            for (pos, &id) in ids.iter().enumerate() {
                for j in 0..c {
                    dx[id * c + j] += out_grad[pos * c + j];
                }
            }
            Ok(vec![dx])
        }
        OpKind::SumAll => Ok(vec![vec![out_grad[0]; inputs[0].len()]]),
        OpKind::MarginalNll { gold } => {
            let p = softmax_flat(inputs[0].values());
            let mass: f64 = gold.iter().map(|&g| p[g]).sum();
            let mut in_gold = vec![false; p.len()];
            for &g in gold {
                in_gold[g] = true;
            }
            let dx = p
                .iter()
                .zip(&in_gold)
                .map(|(&pi, &is_gold)| {
                    let hit = if is_gold { pi / mass } else { 0.0 };
                    (pi - hit) * out_grad[0]
                })
                .collect();
            Ok(vec![dx])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut ComputeGraph, rows: usize, cols: usize, values: Vec<f64>) -> NodeId {
        g.input(Tensor::matrix(rows, cols, values).unwrap().with_grad())
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn singleton_softmax_is_one() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::row(vec![3.7]).unwrap());
        let y = g.softmax_neighbors(x, NeighborMask::all(1, 1)).unwrap();
        assert_eq!(g.value(y).values(), &[1.0]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::row(vec![-1.0]).unwrap());
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).values(), &[-0.2]);
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut g = ComputeGraph::new();
        let x = leaf(&mut g, 1, 1, vec![3.0]);
        let sq = g.hadamard(x, x).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn hadamard_sum_gradients_swap_operands() {
        let mut g = ComputeGraph::new();
        let a = leaf(&mut g, 1, 3, vec![1.0, 2.0, 3.0]);
        let b = leaf(&mut g, 1, 3, vec![4.0, 5.0, 6.0]);
        let prod = g.hadamard(a, b).unwrap();
        let loss = g.sum_all(prod).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = ComputeGraph::new();
        let x = leaf(&mut g, 1, 2, vec![1.0, 2.0]);
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
    }

    #[test]
    fn backward_consumes_graph() {
        let mut g = ComputeGraph::new();
        let x = leaf(&mut g, 1, 1, vec![2.0]);
        let loss = g.hadamard(x, x).unwrap();
        g.backward(loss).unwrap();
        assert!(g.backward(loss).is_err());
        assert!(g.sigmoid(x).is_err());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = ComputeGraph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        match g.matmul(a, b).unwrap_err() {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn all_masked_row_is_degenerate() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let mask = NeighborMask::new(2, 2, vec![true, true, false, false]).unwrap();
        let err = g.softmax_neighbors(x, mask).unwrap_err();
        assert_eq!(err, TensorError::DegenerateSoftmax { row: 1 });
    }

    #[test]
    fn all_masked_row_allowed_when_lenient() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let mask = NeighborMask::new(2, 2, vec![true, true, false, false]).unwrap().lenient();
        let y = g.softmax_neighbors(x, mask).unwrap();
        assert_eq!(g.value(y).values(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
        let eval = g.dropout(x, 0.5, 99, false).unwrap();
        assert_eq!(g.value(eval).values(), &[1.0, -2.0, 3.0]);
        let zero = g.dropout(x, 0.0, 99, true).unwrap();
        assert_eq!(g.value(zero).values(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn dropout_train_scales_kept_entries_deterministically() {
        let mut g1 = ComputeGraph::new();
        let x1 = g1.constant(Tensor::row(vec![1.0; 64]).unwrap());
        let d1 = g1.dropout(x1, 0.5, 1234, true).unwrap();
        let mut g2 = ComputeGraph::new();
        let x2 = g2.constant(Tensor::row(vec![1.0; 64]).unwrap());
        let d2 = g2.dropout(x2, 0.5, 1234, true).unwrap();
        assert_eq!(g1.value(d1).values(), g2.value(d2).values());
        for &v in g1.value(d1).values() {
            assert!(v == 0.0 || v == 2.0);
        }
    }

    #[test]
    fn bias_broadcast_add_backward_sums_rows() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        let b = leaf(&mut g, 1, 2, vec![1.0, -1.0]);
        let y = g.add(x, b).unwrap();
        let loss = g.sum_all(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn gather_rows_scatter_adds_duplicates() {
        let mut g = ComputeGraph::new();
        let table = leaf(&mut g, 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = g.gather_rows(table, vec![1, 1, 2]).unwrap();
        assert_eq!(g.value(picked).values(), &[3.0, 4.0, 3.0, 4.0, 5.0, 6.0]);
        let loss = g.sum_all(picked).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn marginal_nll_uniform_scores() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::column(vec![0.0; 5]).unwrap());
        let loss = g.marginal_nll(x, vec![2]).unwrap();
        let expected = (5.0f64).ln();
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn marginal_nll_two_golds_with_all_mass() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::column(vec![50.0, 50.0, -50.0]).unwrap());
        let loss = g.marginal_nll(x, vec![0, 1]).unwrap();
        assert!(g.value(loss).item() < 1e-12);
    }

    #[test]
    fn mix_scalar_gate_half_blends_evenly() {
        let mut g = ComputeGraph::new();
        let gate = g.constant(Tensor::column(vec![0.5, 0.5]).unwrap());
        let x = g.constant(Tensor::matrix(2, 2, vec![2.0, 4.0, 6.0, 8.0]).unwrap());
        let y = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let out = g.mix(gate, x, y).unwrap();
        assert_eq!(g.value(out).values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tagging_exposes_node_values() {
        let mut g = ComputeGraph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(x).unwrap();
        g.tag(s, "gate");
        let tagged = g.tagged_values("gate");
        assert_eq!(tagged.len(), 1);
        assert_eq!(tagged[0].item(), 0.5);
    }
}
