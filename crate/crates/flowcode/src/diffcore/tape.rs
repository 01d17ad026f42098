use std::sync::Arc;

use crate::diffcore::array::{
    k_broadcast_rows, k_map, k_matmul, k_sum, k_sum_rows, k_transpose, k_zip, DenseArray,
};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Elementwise nonlinearities available on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Relu,
    Gelu,
    Sin,
    Cos,
}

impl ActKind {
    pub fn parse(s: &str) -> Result<ActKind> {
        match s {
            "relu" => Ok(ActKind::Relu),
            "gelu" => Ok(ActKind::Gelu),
            _ => Err(Error::Invalid(format!(
                "unknown activation `{s}` (expected relu|gelu)"
            ))),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            ActKind::Relu => "relu",
            ActKind::Gelu => "gelu",
            ActKind::Sin => "sin",
            ActKind::Cos => "cos",
        }
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() * INV_SQRT_2PI
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

/// Value of the `order`-th derivative of an activation at `x`.
/// Order 0 is the activation itself. The ReLU subgradient at 0 is 0.
pub fn act_value(kind: ActKind, order: u8, x: f64) -> f64 {
    match kind {
        ActKind::Relu => match order {
            0 => x.max(0.0),
            1 => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 0.0,
        },
        ActKind::Gelu => match order {
            0 => x * std_normal_cdf(x),
            1 => std_normal_cdf(x) + x * std_normal_pdf(x),
            2 => std_normal_pdf(x) * (2.0 - x * x),
            3 => -x * std_normal_pdf(x) * (4.0 - x * x),
            _ => unreachable!("gelu derivative order {order} not supported"),
        },
        ActKind::Sin => match order % 4 {
            0 => x.sin(),
            1 => x.cos(),
            2 => -x.sin(),
            _ => -x.cos(),
        },
        ActKind::Cos => match order % 4 {
            0 => x.cos(),
            1 => -x.sin(),
            2 => -x.cos(),
            _ => x.sin(),
        },
    }
}

/// A recorded primitive. Inputs are earlier node ids; the record is
/// acyclic and topologically ordered by construction.
#[derive(Debug, Clone)]
pub enum Op {
    Input { slot: usize },
    Constant(Arc<DenseArray>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Slice { input: NodeId, offset: usize },
    Concat(Vec<NodeId>),
    SliceCols { input: NodeId, offset: usize },
    ConcatCols(Vec<NodeId>),
    BroadcastRows(NodeId),
    SumRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    BroadcastScalar(NodeId),
    Act { input: NodeId, kind: ActKind, order: u8 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat(_) => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::SumRows(_) => "sum_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::Act { .. } => "act",
        }
    }

    fn inputs(&self, buf: &mut Vec<NodeId>) {
        buf.clear();
        match self {
            Op::Input { .. } | Op::Constant(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                buf.push(*a);
                buf.push(*b);
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Slice { input: a, .. }
            | Op::SliceCols { input: a, .. }
            | Op::BroadcastRows(a)
            | Op::SumRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::BroadcastScalar(a)
            | Op::Act { input: a, .. } => buf.push(*a),
            Op::Concat(parts) | Op::ConcatCols(parts) => buf.extend_from_slice(parts),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Append-only record of primitive operations plus their data-flow edges.
///
/// `backward` appends the reverse pass as ordinary nodes, so the result of
/// a backward pass is itself differentiable: calling `backward` on a scalar
/// built from gradient nodes yields exact second-order derivatives.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    input_nodes: Vec<NodeId>,
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

    pub fn num_inputs(&self) -> usize {
        self.input_nodes.len()
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn numel_of(&self, id: NodeId) -> usize {
        self.nodes[id].shape.iter().product()
    }

    /// Node id of the `slot`-th input.
    pub fn input_node(&self, slot: usize) -> Result<NodeId> {
        self.input_nodes.get(slot).copied().ok_or_else(|| {
            Error::Invalid(format!(
                "input slot {slot} out of range ({} inputs)",
                self.input_nodes.len()
            ))
        })
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape });
        id
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn check_rank(&self, op: &'static str, id: NodeId, rank: usize) -> Result<()> {
        if self.nodes[id].shape.len() != rank {
            return Err(self.shape_err(
                op,
                format!(
                    "node {id} has shape {:?}, expected rank {rank}",
                    self.nodes[id].shape
                ),
            ));
        }
        Ok(())
    }

    // ---- builders ------------------------------------------------------

    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.input_nodes.len();
        let id = self.push(Op::Input { slot }, shape.to_vec());
        self.input_nodes.push(id);
        id
    }

    pub fn constant(&mut self, value: DenseArray) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(Arc::new(value)), shape)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(DenseArray::scalar(v))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(DenseArray::zeros(shape))
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(self.shape_err(
                name,
                format!(
                    "operands have shapes {:?} and {:?}",
                    self.nodes[a].shape, self.nodes[b].shape
                ),
            ));
        }
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(make(a, b), shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, Op::Mul)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Neg(a), shape)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Scale(a, c), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_rank("matmul", a, 2)?;
        self.check_rank("matmul", b, 2)?;
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa[1] != sb[0] {
            return Err(self.shape_err("matmul", format!("inner dims {:?} x {:?}", sa, sb)));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul(a, b), shape))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_rank("transpose", a, 2)?;
        let s = &self.nodes[a].shape;
        let shape = vec![s[1], s[0]];
        Ok(self.push(Op::Transpose(a), shape))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.numel_of(a) {
            return Err(self.shape_err(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.nodes[a].shape, shape),
            ));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec()))
    }

    pub fn slice(&mut self, a: NodeId, offset: usize, len: usize) -> Result<NodeId> {
        self.check_rank("slice", a, 1)?;
        if offset + len > self.nodes[a].shape[0] || len == 0 {
            return Err(self.shape_err(
                "slice",
                format!("[{offset}, {}) of length {}", offset + len, self.nodes[a].shape[0]),
            ));
        }
        Ok(self.push(Op::Slice { input: a, offset }, vec![len]))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(self.shape_err("concat", "no parts".into()));
        }
        let mut len = 0;
        for &p in parts {
            self.check_rank("concat", p, 1)?;
            len += self.nodes[p].shape[0];
        }
        Ok(self.push(Op::Concat(parts.to_vec()), vec![len]))
    }

    pub fn slice_cols(&mut self, a: NodeId, offset: usize, len: usize) -> Result<NodeId> {
        self.check_rank("slice_cols", a, 2)?;
        let s = &self.nodes[a].shape;
        if offset + len > s[1] || len == 0 {
            return Err(self.shape_err(
                "slice_cols",
                format!("cols [{offset}, {}) of {}", offset + len, s[1]),
            ));
        }
        let shape = vec![s[0], len];
        Ok(self.push(Op::SliceCols { input: a, offset }, shape))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(self.shape_err("concat_cols", "no parts".into()));
        }
        let rows = self.nodes[parts[0]].shape.first().copied().unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            self.check_rank("concat_cols", p, 2)?;
            if self.nodes[p].shape[0] != rows {
                return Err(self.shape_err("concat_cols", "row counts differ".into()));
            }
            cols += self.nodes[p].shape[1];
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![rows, cols]))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.check_rank("broadcast_rows", a, 1)?;
        let shape = vec![rows, self.nodes[a].shape[0]];
        Ok(self.push(Op::BroadcastRows(a), shape))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_rank("sum_rows", a, 2)?;
        let shape = vec![self.nodes[a].shape[1]];
        Ok(self.push(Op::SumRows(a), shape))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), vec![])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), vec![])
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.numel_of(a) != 1 {
            return Err(self.shape_err("broadcast_scalar", "source is not a scalar".into()));
        }
        Ok(self.push(Op::BroadcastScalar(a), shape.to_vec()))
    }

    pub fn act(&mut self, a: NodeId, kind: ActKind, order: u8) -> Result<NodeId> {
        if kind == ActKind::Gelu && order > 3 {
            return Err(Error::Invalid(format!(
                "gelu derivative order {order} not supported"
            )));
        }
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::Act { input: a, kind, order }, shape))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Append the reverse pass of a scalar `output` to the tape and return,
    /// for each node in `wrt`, the node computing d(output)/d(node).
    ///
    /// Nodes unreachable from `output` get a zero gradient. The appended
    /// gradient nodes are ordinary nodes: feeding them into further ops and
    /// calling `backward` again differentiates through the reverse pass.
    pub fn backward(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if self.numel_of(output) != 1 {
            return Err(Error::NonScalarOutput {
                shape: self.nodes[output].shape.clone(),
            });
        }
        let frontier = output + 1;
        let mut adjoint: Vec<Option<NodeId>> = vec![None; frontier];
        let seed_shape = self.nodes[output].shape.clone();
        adjoint[output] = Some(self.constant(DenseArray::filled(&seed_shape, 1.0)));

        for id in (0..frontier).rev() {
            let Some(g) = adjoint[id] else { continue };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Input { .. } | Op::Constant(_) => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    self.accumulate(&mut adjoint, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    if !self.is_constant(b) {
                        let n = self.neg(g);
                        self.accumulate(&mut adjoint, b, n)?;
                    }
                }
                Op::Mul(a, b) => {
                    if !self.is_constant(a) {
                        let c = self.mul(g, b)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if !self.is_constant(b) {
                        let c = self.mul(g, a)?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Neg(a) => {
                    if !self.is_constant(a) {
                        let c = self.neg(g);
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::Scale(a, c0) => {
                    if !self.is_constant(a) {
                        let c = self.scale(g, c0);
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::MatMul(a, b) => {
                    if !self.is_constant(a) {
                        let bt = self.transpose(b)?;
                        let c = self.matmul(g, bt)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if !self.is_constant(b) {
                        let at = self.transpose(a)?;
                        let c = self.matmul(at, g)?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Transpose(a) => {
                    if !self.is_constant(a) {
                        let c = self.transpose(g)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::Reshape(a) => {
                    if !self.is_constant(a) {
                        let target = self.nodes[a].shape.clone();
                        let c = self.reshape(g, &target)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::Slice { input, offset } => {
                    if !self.is_constant(input) {
                        let total = self.nodes[input].shape[0];
                        let len = self.nodes[id].shape[0];
                        let mut parts = Vec::with_capacity(3);
                        if offset > 0 {
                            parts.push(self.zeros(&[offset]));
                        }
                        parts.push(g);
                        if offset + len < total {
                            parts.push(self.zeros(&[total - offset - len]));
                        }
                        let c = self.concat(&parts)?;
                        self.accumulate(&mut adjoint, input, c)?;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].shape[0];
                        if !self.is_constant(p) {
                            let c = self.slice(g, offset, len)?;
                            self.accumulate(&mut adjoint, p, c)?;
                        }
                        offset += len;
                    }
                }
                Op::SliceCols { input, offset } => {
                    if !self.is_constant(input) {
                        let rows = self.nodes[input].shape[0];
                        let total = self.nodes[input].shape[1];
                        let len = self.nodes[id].shape[1];
                        let mut parts = Vec::with_capacity(3);
                        if offset > 0 {
                            parts.push(self.zeros(&[rows, offset]));
                        }
                        parts.push(g);
                        if offset + len < total {
                            parts.push(self.zeros(&[rows, total - offset - len]));
                        }
                        let c = self.concat_cols(&parts)?;
                        self.accumulate(&mut adjoint, input, c)?;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].shape[1];
                        if !self.is_constant(p) {
                            let c = self.slice_cols(g, offset, len)?;
                            self.accumulate(&mut adjoint, p, c)?;
                        }
                        offset += len;
                    }
                }
                Op::BroadcastRows(a) => {
                    if !self.is_constant(a) {
                        let c = self.sum_rows(g)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::SumRows(a) => {
                    if !self.is_constant(a) {
                        let rows = self.nodes[a].shape[0];
                        let c = self.broadcast_rows(g, rows)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::Sum(a) => {
                    if !self.is_constant(a) {
                        let target = self.nodes[a].shape.clone();
                        let c = self.broadcast_scalar(g, &target)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::Mean(a) => {
                    if !self.is_constant(a) {
                        let target = self.nodes[a].shape.clone();
                        let n: usize = target.iter().product();
                        let s = self.scale(g, 1.0 / n as f64);
                        let c = self.broadcast_scalar(s, &target)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::BroadcastScalar(a) => {
                    if !self.is_constant(a) {
                        let s = self.sum(g);
                        let target = self.nodes[a].shape.clone();
                        let c = self.reshape(s, &target)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::Act { input, kind, order } => {
                    if !self.is_constant(input) {
                        let d = self.act(input, kind, order + 1)?;
                        let c = self.mul(g, d)?;
                        self.accumulate(&mut adjoint, input, c)?;
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adjoint.get(w).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.nodes[w].shape.clone();
                    self.constant(DenseArray::zeros(&shape))
                }
            })
            .collect())
    }

    fn is_constant(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].op, Op::Constant(_))
    }

    fn accumulate(
        &mut self,
        adjoint: &mut [Option<NodeId>],
        target: NodeId,
        contribution: NodeId,
    ) -> Result<()> {
        if self.is_constant(target) {
            return Ok(());
        }
        adjoint[target] = Some(match adjoint[target] {
            Some(existing) => self.add(existing, contribution)?,
            None => contribution,
        });
        Ok(())
    }

    // ---- evaluation ------------------------------------------------------

    /// Evaluate `targets` given one array per input slot. Values are freed
    /// as soon as their last consumer has run.
    pub fn evaluate_many(
        &self,
        targets: &[NodeId],
        inputs: &[DenseArray],
    ) -> Result<Vec<DenseArray>> {
        if inputs.len() != self.input_nodes.len() {
            return Err(Error::Invalid(format!(
                "record has {} input slots, got {} arrays",
                self.input_nodes.len(),
                inputs.len()
            )));
        }
        for (slot, (&node, arr)) in self.input_nodes.iter().zip(inputs).enumerate() {
            if arr.shape() != self.nodes[node].shape.as_slice() {
                return Err(Error::Shape {
                    node,
                    op: "input",
                    detail: format!(
                        "slot {slot} expects shape {:?}, got {:?}",
                        self.nodes[node].shape,
                        arr.shape()
                    ),
                });
            }
        }

        // Mark the ancestors of the requested targets.
        let mut needed = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = targets.to_vec();
        let mut ins = Vec::new();
        while let Some(id) = stack.pop() {
            if needed[id] {
                continue;
            }
            needed[id] = true;
            self.nodes[id].op.inputs(&mut ins);
            stack.extend(ins.iter().copied());
        }

        // Liveness: free a value after its last consumer.
        let mut remaining_uses = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if !needed[id] {
                continue;
            }
            node.op.inputs(&mut ins);
            for &i in &ins {
                remaining_uses[i] += 1;
            }
        }
        for &t in targets {
            remaining_uses[t] += 1;
        }

        let mut values: Vec<Option<Arc<DenseArray>>> = vec![None; self.nodes.len()];
        for id in 0..self.nodes.len() {
            if !needed[id] {
                continue;
            }
            let value = self.eval_node(id, inputs, &values)?;
            values[id] = Some(value);
            self.nodes[id].op.inputs(&mut ins);
            for &i in &ins {
                remaining_uses[i] -= 1;
                if remaining_uses[i] == 0 {
                    values[i] = None;
                }
            }
        }

        Ok(targets
            .iter()
            .map(|&t| values[t].as_ref().expect("target evaluated").as_ref().clone())
            .collect())
    }

    pub fn evaluate(&self, target: NodeId, inputs: &[DenseArray]) -> Result<DenseArray> {
        Ok(self.evaluate_many(&[target], inputs)?.pop().unwrap())
    }

    fn eval_node(
        &self,
        id: NodeId,
        inputs: &[DenseArray],
        values: &[Option<Arc<DenseArray>>],
    ) -> Result<Arc<DenseArray>> {
        let get = |i: NodeId| -> &DenseArray { values[i].as_ref().expect("topological order") };
        let node = &self.nodes[id];
        let out = match &node.op {
            Op::Input { slot } => return Ok(Arc::new(inputs[*slot].clone())),
            Op::Constant(v) => return Ok(Arc::clone(v)),
            Op::Add(a, b) => k_zip(get(*a), get(*b), |x, y| x + y),
            Op::Sub(a, b) => k_zip(get(*a), get(*b), |x, y| x - y),
            Op::Mul(a, b) => k_zip(get(*a), get(*b), |x, y| x * y),
            Op::Neg(a) => k_map(get(*a), |x| -x),
            Op::Scale(a, c) => {
                let c = *c;
                k_map(get(*a), |x| c * x)
            }
            Op::MatMul(a, b) => k_matmul(get(*a), get(*b)),
            Op::Transpose(a) => k_transpose(get(*a)),
            Op::Reshape(a) => DenseArray::raw(node.shape.clone(), get(*a).data().to_vec()),
            Op::Slice { input, offset } => {
                let len = node.shape[0];
                DenseArray::raw(
                    node.shape.clone(),
                    get(*input).data()[*offset..offset + len].to_vec(),
                )
            }
            Op::Concat(parts) => {
                let mut data = Vec::with_capacity(node.shape[0]);
                for &p in parts {
                    data.extend_from_slice(get(p).data());
                }
                DenseArray::raw(node.shape.clone(), data)
            }
            Op::SliceCols { input, offset } => {
                let src = get(*input);
                let (rows, src_cols) = (src.shape()[0], src.shape()[1]);
                let len = node.shape[1];
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    let base = r * src_cols + offset;
                    data.extend_from_slice(&src.data()[base..base + len]);
                }
                DenseArray::raw(node.shape.clone(), data)
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let cols = node.shape[1];
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        let src = get(p);
                        let w = src.shape()[1];
                        data.extend_from_slice(&src.data()[r * w..(r + 1) * w]);
                    }
                }
                DenseArray::raw(node.shape.clone(), data)
            }
            Op::BroadcastRows(a) => k_broadcast_rows(get(*a), node.shape[0]),
            Op::SumRows(a) => k_sum_rows(get(*a)),
            Op::Sum(a) => DenseArray::scalar(k_sum(get(*a))),
            Op::Mean(a) => {
                let src = get(*a);
                DenseArray::scalar(k_sum(src) / src.numel() as f64)
            }
            Op::BroadcastScalar(a) => DenseArray::filled(&node.shape, get(*a).item()),
            Op::Act { input, kind, order } => {
                let (kind, order) = (*kind, *order);
                k_map(get(*input), |x| act_value(kind, order, x))
            }
        };
        Ok(Arc::new(out))
    }
}
