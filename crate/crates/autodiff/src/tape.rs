//! The recording tape and its reverse pass.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the reverse pass is a single backwards sweep.
//! Every node carries a set of input positions through which no adjoint
//! flows; [`Tape::stop_gradient`] is an identity node with its only input
//! blocked.

use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::tensor::{Shape, Tensor};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Discriminant of a primitive, used in errors and for inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Add,
    Sub,
    Scale,
    Hadamard,
    ScaleRows,
    Relu,
    Sigmoid,
    Log,
    Square,
    Clamp,
    RowSoftmax,
    Transpose,
    ConcatCols,
    SliceCols,
    SliceRows,
    RowStack,
    Mean,
    Sum,
    RowSum,
    Lookup,
    StopGradient,
}

/// Variable-length index lists, one per output row, stored flat.
///
/// A row's output is the mean of the table rows it names; an empty bag
/// yields a zero row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bags {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Bags {
    /// One index per row.
    pub fn singletons(indices: impl IntoIterator<Item = usize>) -> Self {
        let indices: Vec<usize> = indices.into_iter().collect();
        let offsets = (0..=indices.len()).collect();
        Self { offsets, indices }
    }

    pub fn from_lists<I, L>(lists: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for list in lists {
            indices.extend(list);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bag(&self, row: usize) -> &[usize] {
        &self.indices[self.offsets[row]..self.offsets[row + 1]]
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}

/// A primitive together with its attributes.
#[derive(Clone, Debug)]
pub enum Op {
    MatMul,
    /// Elementwise sum; the second operand may also be a `1 x n` row
    /// broadcast over every row of the first (bias add).
    Add,
    Sub,
    Scale(f64),
    Hadamard,
    /// `[m x n] * [m x 1]`: multiplies row `i` by the `i`-th scalar.
    ScaleRows,
    Relu,
    Sigmoid,
    Log,
    Square,
    Clamp {
        lo: f64,
        hi: f64,
    },
    RowSoftmax,
    Transpose,
    ConcatCols,
    SliceCols {
        start: usize,
        len: usize,
    },
    SliceRows {
        start: usize,
        len: usize,
    },
    RowStack,
    Mean,
    Sum,
    RowSum,
    /// Mean-pooled row lookup into the single input table.
    Lookup(Arc<Bags>),
    StopGradient,
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::MatMul => OpKind::MatMul,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Scale(_) => OpKind::Scale,
            Op::Hadamard => OpKind::Hadamard,
            Op::ScaleRows => OpKind::ScaleRows,
            Op::Relu => OpKind::Relu,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Log => OpKind::Log,
            Op::Square => OpKind::Square,
            Op::Clamp { .. } => OpKind::Clamp,
            Op::RowSoftmax => OpKind::RowSoftmax,
            Op::Transpose => OpKind::Transpose,
            Op::ConcatCols => OpKind::ConcatCols,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::RowStack => OpKind::RowStack,
            Op::Mean => OpKind::Mean,
            Op::Sum => OpKind::Sum,
            Op::RowSum => OpKind::RowSum,
            Op::Lookup(_) => OpKind::Lookup,
            Op::StopGradient => OpKind::StopGradient,
        }
    }
}

#[derive(Clone, Debug)]
enum NodeOp {
    Leaf,
    Constant,
    Prim(Op),
}

/// One recorded primitive application.
#[derive(Clone, Debug)]
pub struct TapeNode {
    op: NodeOp,
    inputs: Vec<NodeId>,
    output: Tensor,
    grad_blocked: Vec<usize>,
    requires_grad: bool,
}

impl TapeNode {
    pub fn kind(&self) -> OpKind {
        match &self.op {
            NodeOp::Leaf => OpKind::Leaf,
            NodeOp::Constant => OpKind::Constant,
            NodeOp::Prim(op) => op.kind(),
        }
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Input positions through which the reverse pass sends nothing.
    pub fn grad_blocked_inputs(&self) -> &[usize] {
        &self.grad_blocked
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    fn is_blocked(&self, position: usize) -> bool {
        self.grad_blocked.contains(&position)
    }
}

/// Accumulated adjoints from one reverse pass, indexed by node.
#[derive(Clone, Debug)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl GradientMap {
    /// The adjoint of `id`, if any path from the loss reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// The adjoint of `id`, or zeros when no unblocked path reached it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let s = self.shapes[id.0];
                Tensor::zeros(s.rows, s.cols)
            }
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// A single-threaded recording of primitive applications.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    pinned: Option<PinnedValues>,
}

#[derive(Clone, Debug)]
struct PinnedValues {
    values: Vec<Tensor>,
    next: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&TapeNode> {
        self.nodes.get(id.0).ok_or(AutodiffError::InvalidNode(id.0))
    }

    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].output
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].output.shape()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push_source(NodeOp::Leaf, value, true)
    }

    /// An input that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push_source(NodeOp::Constant, value, false)
    }

    fn push_source(&mut self, op: NodeOp, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            let kind = if requires_grad {
                OpKind::Leaf
            } else {
                OpKind::Constant
            };
            return Err(AutodiffError::NonFinite { op: kind });
        }
        self.nodes.push(TapeNode {
            op,
            inputs: Vec::new(),
            output: value,
            grad_blocked: Vec::new(),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records `op` applied to `inputs`.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let blocked = if matches!(op, Op::StopGradient) {
            vec![0]
        } else {
            Vec::new()
        };
        self.apply_blocked(op, inputs, &blocked)
    }

    /// Records `op` with the given input positions excluded from the
    /// reverse pass.
    pub fn apply_blocked(
        &mut self,
        op: Op,
        inputs: &[NodeId],
        blocked: &[usize],
    ) -> Result<NodeId> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(AutodiffError::InvalidNode(id.0));
            }
        }
        let kind = op.kind();
        if let Some(&p) = blocked.iter().find(|&&p| p >= inputs.len()) {
            return Err(AutodiffError::InvalidAttribute {
                op: kind,
                reason: format!("blocked position {p} out of range"),
            });
        }
        let values: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].output).collect();
        let output = forward(&op, &values)?;
        if !output.is_finite() {
            return Err(AutodiffError::NonFinite { op: kind });
        }
        let requires_grad = inputs
            .iter()
            .enumerate()
            .any(|(p, id)| !blocked.contains(&p) && self.nodes[id.0].requires_grad);
        let mut grad_blocked = blocked.to_vec();
        grad_blocked.sort_unstable();
        grad_blocked.dedup();
        self.nodes.push(TapeNode {
            op: NodeOp::Prim(op),
            inputs: inputs.to_vec(),
            output,
            grad_blocked,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Hadamard, &[a, b])
    }

    pub fn scale_rows(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.apply(Op::ScaleRows, &[a, s])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.apply(Op::Clamp { lo, hi }, &[a])
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::RowSoftmax, &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::ConcatCols, parts)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::SliceCols { start, len }, &[a])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::SliceRows { start, len }, &[a])
    }

    /// Splits `a` into `parts` equal row blocks.
    pub fn split_rows(&mut self, a: NodeId, parts: usize) -> Result<Vec<NodeId>> {
        let rows = self.shape(a).rows;
        if parts == 0 || !rows.is_multiple_of(parts) {
            return Err(AutodiffError::InvalidAttribute {
                op: OpKind::SliceRows,
                reason: format!("cannot split {rows} rows into {parts} parts"),
            });
        }
        let len = rows / parts;
        (0..parts)
            .map(|p| self.slice_rows(a, p * len, len))
            .collect()
    }

    pub fn row_stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::RowStack, parts)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::RowSum, &[a])
    }

    pub fn lookup(&mut self, table: NodeId, bags: Arc<Bags>) -> Result<NodeId> {
        self.apply(Op::Lookup(bags), &[table])
    }

    /// Identity in the forward pass; contributes a zero adjoint to `x`.
    ///
    /// On a tape created with [`Tape::with_pinned_stop_gradients`] the
    /// n-th call outputs the n-th pinned tensor instead of `x`'s value.
    pub fn stop_gradient(&mut self, x: NodeId) -> Result<NodeId> {
        let Some(pins) = self.pinned.as_mut() else {
            return self.apply(Op::StopGradient, &[x]);
        };
        let shape = self
            .nodes
            .get(x.0)
            .ok_or(AutodiffError::InvalidNode(x.0))?
            .output
            .shape();
        let value = pins.values.get(pins.next).cloned().ok_or_else(|| {
            AutodiffError::Check(format!(
                "stop_gradient call {} has no pinned value",
                pins.next
            ))
        })?;
        if value.shape() != shape {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::StopGradient,
                shapes: vec![shape, value.shape()],
            });
        }
        pins.next += 1;
        self.nodes.push(TapeNode {
            op: NodeOp::Prim(Op::StopGradient),
            inputs: vec![x],
            output: value,
            grad_blocked: vec![0],
            requires_grad: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A tape whose stop-gradient outputs are replaced, in call order, by
    /// `values`. Re-running a function on such a tape holds every blocked
    /// quantity fixed, which is what its reverse-mode gradient describes.
    pub fn with_pinned_stop_gradients(values: Vec<Tensor>) -> Self {
        Self {
            nodes: Vec::new(),
            pinned: Some(PinnedValues { values, next: 0 }),
        }
    }

    /// Outputs of every stop-gradient node, in tape order.
    pub fn stop_gradient_values(&self) -> Vec<Tensor> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, NodeOp::Prim(Op::StopGradient)))
            .map(|n| n.output.clone())
            .collect()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Adjoints are accumulated strictly in reverse tape order, so the
    /// result is bit-reproducible for a given tape.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let node = self.node(loss)?;
        if !node.output.shape().is_scalar() {
            return Err(AutodiffError::NonScalarLoss(node.output.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let NodeOp::Prim(op) = &node.op else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (pos, &input) in node.inputs.iter().enumerate() {
                if node.is_blocked(pos) || !self.nodes[input.0].requires_grad {
                    continue;
                }
                let contrib = self.adjoint(op, node, pos, &g);
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.output.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(GradientMap { grads, shapes })
    }

    /// Adjoint contribution of node output gradient `g` to input `pos`.
    fn adjoint(&self, op: &Op, node: &TapeNode, pos: usize, g: &Tensor) -> Tensor {
        let input = |p: usize| &self.nodes[node.inputs[p].0].output;
        let out = &node.output;
        match op {
            Op::MatMul => {
                if pos == 0 {
                    g.matmul_t(input(1))
                } else {
                    input(0).t_matmul(g)
                }
            }
            Op::Add => {
                let target = input(pos).shape();
                if target == g.shape() {
                    g.clone()
                } else {
                    column_sums(g)
                }
            }
            Op::Sub => {
                if pos == 0 {
                    g.clone()
                } else {
                    g.map(|v| -v)
                }
            }
            Op::Scale(c) => g.map(|v| v * c),
            Op::Hadamard => g.zip_map(input(1 - pos), |a, b| a * b),
            Op::ScaleRows => {
                let (a, s) = (input(0), input(1));
                if pos == 0 {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let sr = s.data()[r];
                        d.row_slice_mut(r).iter_mut().for_each(|v| *v *= sr);
                    }
                    d
                } else {
                    let data = (0..a.rows())
                        .map(|r| dot(g.row_slice(r), a.row_slice(r)))
                        .collect();
                    Tensor::new(a.rows(), 1, data).expect("shape")
                }
            }
            Op::Relu => g.zip_map(out, |gv, y| if y > 0.0 { gv } else { 0.0 }),
            Op::Sigmoid => g.zip_map(out, |gv, y| gv * y * (1.0 - y)),
            Op::Log => g.zip_map(input(0), |gv, x| gv / x),
            Op::Square => g.zip_map(input(0), |gv, x| 2.0 * x * gv),
            Op::Clamp { lo, hi } => {
                g.zip_map(
                    input(0),
                    |gv, x| {
                        if x >= *lo && x <= *hi {
                            gv
                        } else {
                            0.0
                        }
                    },
                )
            }
            Op::RowSoftmax => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let y = out.row_slice(r);
                    let s = dot(g.row_slice(r), y);
                    for (dv, yv) in d.row_slice_mut(r).iter_mut().zip(y) {
                        *dv = yv * (*dv - s);
                    }
                }
                d
            }
            Op::Transpose => g.transpose(),
            Op::ConcatCols => {
                let start: usize = (0..pos).map(|p| input(p).cols()).sum();
                g.slice_cols(start, input(pos).cols())
            }
            Op::SliceCols { start, len } => {
                let src = input(0);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    d.row_slice_mut(r)[*start..start + len].copy_from_slice(g.row_slice(r));
                }
                d
            }
            Op::SliceRows { start, len } => {
                let src = input(0);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                let c = src.cols();
                d.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                d
            }
            Op::RowStack => {
                let start: usize = (0..pos).map(|p| input(p).rows()).sum();
                g.slice_rows(start, input(pos).rows())
            }
            Op::Mean => {
                let src = input(0);
                Tensor::full(src.rows(), src.cols(), g.item() / src.len() as f64)
            }
            Op::Sum => {
                let src = input(0);
                Tensor::full(src.rows(), src.cols(), g.item())
            }
            Op::RowSum => {
                let src = input(0);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    let gv = g.data()[r];
                    d.row_slice_mut(r).iter_mut().for_each(|v| *v = gv);
                }
                d
            }
            Op::Lookup(bags) => {
                let table = input(0);
                let mut d = Tensor::zeros(table.rows(), table.cols());
                for r in 0..bags.len() {
                    let bag = bags.bag(r);
                    if bag.is_empty() {
                        continue;
                    }
                    let w = 1.0 / bag.len() as f64;
                    let gr = g.row_slice(r);
                    for &idx in bag {
                        for (dv, gv) in d.row_slice_mut(idx).iter_mut().zip(gr) {
                            *dv += w * gv;
                        }
                    }
                }
                d
            }
            Op::StopGradient => g.clone(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row_slice(r)) {
            *o += v;
        }
    }
    Tensor::new(1, g.cols(), out).expect("non-empty")
}

fn mismatch(op: &Op, inputs: &[&Tensor]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.kind(),
        shapes: inputs.iter().map(|t| t.shape()).collect(),
    }
}

fn arity(op: &Op, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(AutodiffError::InvalidAttribute {
            op: op.kind(),
            reason: format!("expected {n} inputs, got {}", inputs.len()),
        })
    }
}

fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::ConcatCols | Op::RowStack => {
            if inputs.is_empty() {
                return Err(AutodiffError::InvalidAttribute {
                    op: op.kind(),
                    reason: "needs at least one input".into(),
                });
            }
        }
        Op::MatMul | Op::Add | Op::Sub | Op::Hadamard | Op::ScaleRows => arity(op, inputs, 2)?,
        _ => arity(op, inputs, 1)?,
    }
    let out = match op {
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.cols() != b.rows() {
                return Err(mismatch(op, inputs));
            }
            a.matmul(b)
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                a.zip_map(b, |x, y| x + y)
            } else if b.rows() == 1 && b.cols() == a.cols() {
                let mut out = a.clone();
                for r in 0..out.rows() {
                    for (o, v) in out.row_slice_mut(r).iter_mut().zip(b.data()) {
                        *o += v;
                    }
                }
                out
            } else {
                return Err(mismatch(op, inputs));
            }
        }
        Op::Sub | Op::Hadamard => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, inputs));
            }
            if matches!(op, Op::Sub) {
                a.zip_map(b, |x, y| x - y)
            } else {
                a.zip_map(b, |x, y| x * y)
            }
        }
        Op::Scale(c) => inputs[0].map(|v| v * c),
        Op::ScaleRows => {
            let (a, s) = (inputs[0], inputs[1]);
            if s.cols() != 1 || s.rows() != a.rows() {
                return Err(mismatch(op, inputs));
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                let sr = s.data()[r];
                out.row_slice_mut(r).iter_mut().for_each(|v| *v *= sr);
            }
            out
        }
        Op::Relu => inputs[0].map(|v| v.max(0.0)),
        Op::Sigmoid => inputs[0].map(sigmoid),
        Op::Log => inputs[0].map(f64::ln),
        Op::Square => inputs[0].map(|v| v * v),
        Op::Clamp { lo, hi } => {
            if lo > hi {
                return Err(AutodiffError::InvalidAttribute {
                    op: op.kind(),
                    reason: format!("lower bound {lo} exceeds upper bound {hi}"),
                });
            }
            inputs[0].map(|v| v.clamp(*lo, *hi))
        }
        Op::RowSoftmax => {
            let mut out = inputs[0].clone();
            for r in 0..out.rows() {
                let row = out.row_slice_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            out
        }
        Op::Transpose => inputs[0].transpose(),
        Op::ConcatCols => {
            let rows = inputs[0].rows();
            if inputs.iter().any(|t| t.rows() != rows) {
                return Err(mismatch(op, inputs));
            }
            let cols: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row_slice(r));
                }
            }
            Tensor::new(rows, cols, data)?
        }
        Op::SliceCols { start, len } => {
            let a = inputs[0];
            if *len == 0 || start + len > a.cols() {
                return Err(AutodiffError::InvalidAttribute {
                    op: op.kind(),
                    reason: format!("columns {start}..{} out of {}", start + len, a.shape()),
                });
            }
            a.slice_cols(*start, *len)
        }
        Op::SliceRows { start, len } => {
            let a = inputs[0];
            if *len == 0 || start + len > a.rows() {
                return Err(AutodiffError::InvalidAttribute {
                    op: op.kind(),
                    reason: format!("rows {start}..{} out of {}", start + len, a.shape()),
                });
            }
            a.slice_rows(*start, *len)
        }
        Op::RowStack => {
            let cols = inputs[0].cols();
            if inputs.iter().any(|t| t.cols() != cols) {
                return Err(mismatch(op, inputs));
            }
            let rows: usize = inputs.iter().map(|t| t.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for t in inputs {
                data.extend_from_slice(t.data());
            }
            Tensor::new(rows, cols, data)?
        }
        Op::Mean => Tensor::scalar(inputs[0].sum() / inputs[0].len() as f64),
        Op::Sum => Tensor::scalar(inputs[0].sum()),
        Op::RowSum => {
            let a = inputs[0];
            let data = (0..a.rows()).map(|r| a.row_slice(r).iter().sum()).collect();
            Tensor::new(a.rows(), 1, data)?
        }
        Op::Lookup(bags) => {
            let table = inputs[0];
            if bags.is_empty() {
                return Err(AutodiffError::InvalidAttribute {
                    op: op.kind(),
                    reason: "no rows to look up".into(),
                });
            }
            if let Some(max) = bags.max_index() {
                if max >= table.rows() {
                    return Err(AutodiffError::InvalidAttribute {
                        op: op.kind(),
                        reason: format!("index {max} outside table {}", table.shape()),
                    });
                }
            }
            let mut out = Tensor::zeros(bags.len(), table.cols());
            for r in 0..bags.len() {
                let bag = bags.bag(r);
                if bag.is_empty() {
                    continue;
                }
                let w = 1.0 / bag.len() as f64;
                let row = out.row_slice_mut(r);
                for &idx in bag {
                    for (o, v) in row.iter_mut().zip(table.row_slice(idx)) {
                        *o += w * v;
                    }
                }
            }
            out
        }
        Op::StopGradient => inputs[0].clone(),
    };
    Ok(out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
