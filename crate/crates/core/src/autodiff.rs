//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records ops eagerly as they execute: every call computes its value
//! immediately and appends a node that remembers its inputs. Because inputs always
//! exist before the node that consumes them, node order is a topological order and
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//!
//! Trainable tensors live in a [`ParamStore`]; [`ParamStore::bind`] copies them onto
//! a tape as parameter leaves, and [`Gradients::param`] returns their gradients.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::plan::{PatchPlan, SeqPatchPlan};
use crate::tensor::{self, Shape, Tensor};
use crate::{Error, Real, Result};

/// Index of a trainable tensor inside a [`ParamStore`].
pub type ParamId = usize;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op tags, used for reporting and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Matmul,
    Relu,
    SumAxes,
    Tile,
    Transpose,
    Slice,
    Reshape,
    Concat,
    Softmax,
    GatherTime,
    CausalConv,
    PatchReduce,
    SeqPatchReduce,
    SoftmaxCrossEntropy,
    Mse,
}

/// Deliberately wrong backward rule, used to prove that the gradient checker
/// notices broken derivatives. Every input gradient emitted by nodes of kind `op`
/// is multiplied by `factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFault {
    pub op: OpKind,
    pub factor: Real,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Matmul(Var, Var),
    Relu(Var),
    SumAxes { x: Var, axes: Vec<usize> },
    Tile { x: Var, axis: usize },
    Transpose(Var),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Softmax(Var),
    GatherTime { x: Var, indices: Vec<usize> },
    CausalConv { x: Var, kernel: Var, bias: Var },
    PatchReduce { f: Var, plan: Arc<PatchPlan>, filter: Var, bias: Var },
    SeqPatchReduce { f: Var, plan: Arc<SeqPatchPlan>, filter: Var, bias: Var },
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Tensor },
    Mse { pred: Var, target: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Relu(..) => OpKind::Relu,
            Op::SumAxes { .. } => OpKind::SumAxes,
            Op::Tile { .. } => OpKind::Tile,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Concat { .. } => OpKind::Concat,
            Op::Softmax(..) => OpKind::Softmax,
            Op::GatherTime { .. } => OpKind::GatherTime,
            Op::CausalConv { .. } => OpKind::CausalConv,
            Op::PatchReduce { .. } => OpKind::PatchReduce,
            Op::SeqPatchReduce { .. } => OpKind::SeqPatchReduce,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Mse { .. } => OpKind::Mse,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Softmax(x) => vec![*x],
            Op::SumAxes { x, .. } | Op::Tile { x, .. } | Op::Slice { x, .. } | Op::GatherTime { x, .. } => {
                vec![*x]
            }
            Op::Concat { parts, .. } => parts.clone(),
            Op::CausalConv { x, kernel, bias } => vec![*x, *kernel, *bias],
            Op::PatchReduce { f, filter, bias, .. } | Op::SeqPatchReduce { f, filter, bias, .. } => {
                vec![*f, *filter, *bias]
            }
            Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Eager op recorder.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<GradientFault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward pass applies `fault`.
    pub fn with_fault(fault: Option<GradientFault>) -> Self {
        Self {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Inputs of node `v`, all of which precede it on the tape.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Total number of scalars held by node values.
    pub fn stored_elements(&self) -> usize {
        self.nodes.iter().map(|n| n.value.numel()).sum()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf; when `requires_grad` its gradient is available via [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf tied to parameter `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        let v = self.leaf(value, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Result<Var> {
        let y = tensor::scale(self.value(x), c)?;
        Ok(self.push(y, Op::Scale(x, c)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Matmul(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = tensor::relu(self.value(x))?;
        Ok(self.push(y, Op::Relu(x)))
    }

    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let y = tensor::sum_axes(self.value(x), axes)?;
        Ok(self.push(
            y,
            Op::SumAxes {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.sum_axes(x, &axes)
    }

    pub fn tile(&mut self, x: Var, axis: usize, reps: usize) -> Result<Var> {
        let y = tensor::tile(self.value(x), axis, reps)?;
        Ok(self.push(y, Op::Tile { x, axis }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = tensor::transpose(self.value(x))?;
        Ok(self.push(y, Op::Transpose(x)))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let y = tensor::slice(self.value(x), axis, start, end)?;
        Ok(self.push(y, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(dims)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let y = tensor::concat(&values, axis)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = tensor::softmax_lastaxis(self.value(x))?;
        Ok(self.push(y, Op::Softmax(x)))
    }

    pub fn gather_time(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let y = tensor::gather_time(self.value(x), indices)?;
        Ok(self.push(
            y,
            Op::GatherTime {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn causal_conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let y = tensor::causal_conv1d(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(y, Op::CausalConv { x, kernel, bias }))
    }

    pub fn patch_reduce(
        &mut self,
        f: Var,
        plan: &Arc<PatchPlan>,
        filter: Var,
        bias: Var,
    ) -> Result<Var> {
        let y = tensor::patch_reduce(self.value(f), plan, self.value(filter), self.value(bias))?;
        Ok(self.push(
            y,
            Op::PatchReduce {
                f,
                plan: Arc::clone(plan),
                filter,
                bias,
            },
        ))
    }

    pub fn seq_patch_reduce(
        &mut self,
        f: Var,
        plan: &Arc<SeqPatchPlan>,
        filter: Var,
        bias: Var,
    ) -> Result<Var> {
        let y = tensor::seq_patch_reduce(self.value(f), plan, self.value(filter), self.value(bias))?;
        Ok(self.push(
            y,
            Op::SeqPatchReduce {
                f,
                plan: Arc::clone(plan),
                filter,
                bias,
            },
        ))
    }

    /// Mean softmax cross-entropy of `logits[N, C]` against `targets` (scalar output).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = tensor::softmax_cross_entropy(self.value(logits), targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error (scalar output).
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = tensor::mse(self.value(pred), self.value(target))?;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }))
    }

    /// Applies an attribute-free op by name. Unknown names fail with
    /// [`Error::UnsupportedOp`].
    pub fn apply(&mut self, name: &str, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid("apply", alloc::format!("`{name}` takes {n} inputs, got {}", inputs.len())))
            }
        };
        match name {
            "add" | "sub" | "mul" | "matmul" => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                match name {
                    "add" => self.add(a, b),
                    "sub" => self.sub(a, b),
                    "mul" => self.mul(a, b),
                    _ => self.matmul(a, b),
                }
            }
            "relu" | "softmax" | "sum" | "transpose" => {
                arity(1)?;
                let x = inputs[0];
                match name {
                    "relu" => self.relu(x),
                    "softmax" => self.softmax(x),
                    "sum" => self.sum(x),
                    _ => self.transpose(x),
                }
            }
            other => Err(Error::UnsupportedOp(other.to_string())),
        }
    }

    /// Gradients of `<seed, output>` with respect to every leaf that requires them.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::shape("backward", seed.shape(), out_shape));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed.clone());
        let mut result = Gradients::default();
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            result.visited += 1;
            if let Op::Leaf = node.op {
                match node.param {
                    Some(id) => result.set_param(id, g),
                    None => {
                        result.leaves.insert(idx, g);
                    }
                }
                continue;
            }
            let mut contributions = self.node_backward(node, &g)?;
            if let Some(fault) = self.fault.filter(|f| f.op == node.op.kind()) {
                for (_, c) in contributions.iter_mut() {
                    *c = tensor::scale(c, fault.factor)?;
                }
            }
            for (v, c) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(result)
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![
                (*a, tensor::sum_to_shape(g, val(*a).shape())?),
                (*b, tensor::sum_to_shape(g, val(*b).shape())?),
            ],
            Op::Sub(a, b) => vec![
                (*a, tensor::sum_to_shape(g, val(*a).shape())?),
                (*b, tensor::scale(&tensor::sum_to_shape(g, val(*b).shape())?, -1.0)?),
            ],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].needs_grad {
                    out.push((*a, tensor::sum_to_shape(&tensor::mul(g, val(*b))?, val(*a).shape())?));
                }
                if self.nodes[b.0].needs_grad {
                    out.push((*b, tensor::sum_to_shape(&tensor::mul(g, val(*a))?, val(*b).shape())?));
                }
                out
            }
            Op::Scale(x, c) => vec![(*x, tensor::scale(g, *c)?)],
            Op::Matmul(a, b) => {
                let (ga, gb) = tensor::matmul_backward(val(*a), val(*b), g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Relu(x) => {
                let data = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(*x, Tensor::from_parts(val(*x).dims().to_vec(), data))]
            }
            Op::SumAxes { x, axes } => {
                let in_dims = val(*x).dims();
                let expanded: Vec<usize> = in_dims
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
                    .collect();
                let gx = tensor::add(&Tensor::zeros(in_dims), &g.reshape(&expanded)?)?;
                vec![(*x, gx)]
            }
            Op::Tile { x, axis } => vec![(*x, tensor::sum_axes(g, &[*axis])?)],
            Op::Transpose(x) => vec![(*x, tensor::transpose(g)?)],
            Op::Slice { x, axis, start } => {
                vec![(*x, tensor::unslice(g, val(*x).shape(), *axis, *start))]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).dims())?)],
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = val(p).dims()[*axis];
                    out.push((p, tensor::slice(g, *axis, offset, offset + len)?));
                    offset += len;
                }
                out
            }
            Op::Softmax(x) => vec![(*x, tensor::softmax_backward(&node.value, g))],
            Op::GatherTime { x, indices } => {
                let seq_len = val(*x).dims()[val(*x).rank() - 2];
                vec![(*x, tensor::scatter_time_add(g, indices, seq_len)?)]
            }
            Op::CausalConv { x, kernel, bias } => {
                let (gx, gk, gb) = tensor::causal_conv1d_backward(val(*x), val(*kernel), val(*bias), g)?;
                vec![(*x, gx), (*kernel, gk), (*bias, gb)]
            }
            Op::PatchReduce { f, plan, filter, bias } => {
                let (gf, gw, gb) = tensor::patch_reduce_backward(val(*f), plan, val(*filter), val(*bias), g)?;
                vec![(*f, gf), (*filter, gw), (*bias, gb)]
            }
            Op::SeqPatchReduce { f, plan, filter, bias } => {
                let (gf, gw, gb) =
                    tensor::seq_patch_reduce_backward(val(*f), plan, val(*filter), val(*bias), g)?;
                vec![(*f, gf), (*filter, gw), (*bias, gb)]
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let scale = g.item()? / targets.len() as Real;
                let c = probs.dims()[1];
                let mut data = probs.data().to_vec();
                for (row, &t) in data.chunks_mut(c).zip(targets) {
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![(*logits, Tensor::from_parts(probs.dims().to_vec(), data))]
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let scale = 2.0 * g.item()? / p.numel() as Real;
                let gp = Tensor::from_parts(
                    p.dims().to_vec(),
                    p.data().iter().zip(t.data()).map(|(a, b)| scale * (a - b)).collect(),
                );
                let gt = tensor::scale(&gp, -1.0)?;
                vec![(*pred, gp), (*target, gt)]
            }
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Default, Debug, Clone)]
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    leaves: BTreeMap<usize, Tensor>,
    visited: usize,
}

impl Gradients {
    fn set_param(&mut self, id: ParamId, g: Tensor) {
        if self.params.len() <= id {
            self.params.resize_with(id + 1, || None);
        }
        match &mut self.params[id] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradient of parameter `id`; `None` if the output does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id).and_then(Option::as_ref)
    }

    /// Gradient of a non-parameter leaf created with `requires_grad`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    /// Number of nodes processed by the reverse sweep.
    pub fn visited(&self) -> usize {
        self.visited
    }

    /// Per-parameter gradients for a store of `n` tensors, zero-filled where absent.
    pub fn dense(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .enumerate()
            .map(|(id, (_, value))| {
                self.param(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(value.dims()))
            })
            .collect()
    }
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of trainable scalars.
    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Config(alloc::format!("unknown parameter `{name}`")))?;
        if self.values[id].shape() != value.shape() {
            return Err(Error::shape("assign", self.values[id].shape(), value.shape()));
        }
        self.values[id] = value;
        Ok(())
    }

    /// Copies every parameter onto `tape` as a trainable leaf; result is indexed by [`ParamId`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values
            .iter()
            .enumerate()
            .map(|(id, v)| tape.param(id, v.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step `h`.
    pub step: Real,
    /// Maximum admissible relative error.
    pub tolerance: Real,
    /// Probe at most this many entries per tensor (chosen at random); `None` probes all.
    pub max_probes: Option<usize>,
    pub probe_seed: u64,
    pub fault: Option<GradientFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_probes: None,
            probe_seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub probes: usize,
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over probed entries.
    pub max_rel_error: Real,
    /// Largest analytic gradient magnitude over probed entries.
    pub max_abs_grad: Real,
    /// Largest finite-difference gradient magnitude over probed entries.
    pub max_abs_numeric: Real,
}

/// Below this, an analytic gradient counts as identically zero.
pub const DEGENERATE_GRAD: Real = 1e-10;
/// Finite-difference noise floor for a degenerate tensor.
const DEGENERATE_NUMERIC: Real = 1e-7;

impl TensorCheck {
    /// Both the analytic and the numeric gradient vanish, so the relative error
    /// only measures rounding noise.
    pub fn is_degenerate(&self) -> bool {
        self.max_abs_grad < DEGENERATE_GRAD && self.max_abs_numeric < DEGENERATE_NUMERIC
    }

    pub fn passed(&self, tolerance: Real) -> bool {
        self.max_rel_error < tolerance || self.is_degenerate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: Real,
    pub loss: Real,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Every tensor is within tolerance or degenerate.
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed(self.tolerance))
    }

    /// Largest relative error over the non-degenerate tensors.
    pub fn worst(&self) -> Real {
        self.tensors
            .iter()
            .filter(|t| !t.is_degenerate())
            .map(|t| t.max_rel_error)
            .fold(0.0, Real::max)
    }
}

/// Compares reverse-mode gradients of a scalar loss against central differences
/// for every parameter in `store`. `loss` receives a fresh tape and the bound
/// parameter vars and must return a one-element var.
pub fn grad_check(
    store: &mut ParamStore,
    options: &GradCheckOptions,
    mut loss: impl FnMut(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::with_fault(options.fault);
    let vars = store.bind(&mut tape);
    let out = loss(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::shape("grad_check", value.shape(), &Shape::scalar()));
    }
    let base = value.data()[0];
    let grads = tape.backward(out, &Tensor::ones(value.dims()))?;
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<Real> {
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let out = loss(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.probe_seed);
    let h = options.step;
    let mut tensors = Vec::with_capacity(store.len());
    for id in 0..store.len() {
        let n = store.get(id).numel();
        let probes: Vec<usize> = match options.max_probes {
            Some(k) if k < n => {
                let mut picked = index::sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        let analytic = grads.param(id);
        let mut max_rel: Real = 0.0;
        let mut max_abs: Real = 0.0;
        let mut max_num: Real = 0.0;
        for &i in &probes {
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
            max_abs = max_abs.max(a.abs());
            max_num = max_num.max(numeric.abs());
        }
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            probes: probes.len(),
            max_rel_error: max_rel,
            max_abs_grad: max_abs,
            max_abs_numeric: max_num,
        });
    }
    Ok(GradCheckReport {
        tolerance: options.tolerance,
        loss: base,
        tensors,
    })
}
