//! Trainable building blocks.
//!
//! Layers do not own their tensors: each keeps [`ParamId`]s into a shared
//! [`ParamStore`]. Every layer has an eager `forward` that works on plain tensors
//! and a `forward_taped` that records onto a [`Tape`] for training; `params` in
//! the taped variants is the slice returned by [`ParamStore::bind`].

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::plan::{PatchPlan, SeqPatchPlan};
use crate::tensor::{self, Tensor};
use crate::{math, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, t: Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(t),
            Activation::Relu => tensor::relu(&t),
        }
    }

    fn apply_taped(self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(v),
            Activation::Relu => tape.relu(v),
        }
    }
}

/// How the memory bank `B` modulates the tiled values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    /// `B` is `[1, J, Z]`: one row per patch, so the softmax over patches mixes
    /// distinct value rows.
    PerPatch,
    /// `B` is `[L, 1, Z]`: one row per time step, shared by all patches. Every
    /// value row at step `t` is then identical and the attention weights cancel.
    Literal,
}

pub(crate) fn uniform(dims: &[usize], limit: Real, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random_range(-limit..limit))
}

/// Glorot-uniform bound.
pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> Real {
    math::sqrt(6.0 / (fan_in + fan_out) as Real)
}

const BIAS_INIT: Real = 0.01;

/// Spatial dropout state for a training pass: a rate and the generator masks are drawn from.
pub struct Dropout {
    rate: Real,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: Real, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate, rng })
    }

    pub fn apply(&mut self, tape: &mut Tape, f: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(f);
        }
        let mask = tensor::spatial_dropout_mask(tape.value(f).dims(), self.rate, &mut self.rng)?;
        let m = tape.constant(mask);
        tape.mul(f, m)
    }
}

fn drop(tape: &mut Tape, f: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, f),
        None => Ok(f),
    }
}

/// Causal 1-D convolution `[.., L, M] -> [.., L, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if width == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!(
                "{name}: conv needs positive width and channels, got w={width} M={in_channels} K={out_channels}"
            )));
        }
        let limit = glorot(width * in_channels, width * out_channels);
        let kernel = store.add(
            format!("{name}.kernel"),
            uniform(&[width, in_channels, out_channels], limit, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform(&[out_channels], BIAS_INIT, rng));
        Ok(Self {
            kernel,
            bias,
            width,
            in_channels,
            out_channels,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        tensor::causal_conv1d(x, store.get(self.kernel), store.get(self.bias))
    }

    pub fn forward_taped(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        tape.causal_conv1d(x, params[self.kernel], params[self.bias])
    }
}

/// Affine map over the last axis: `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!("{name}: dense layer needs positive widths")));
        }
        let limit = glorot(in_features, out_features);
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[in_features, out_features], limit, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform(&[out_features], BIAS_INIT, rng));
        Ok(Self {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = tensor::matmul(x, store.get(self.weight))?;
        tensor::add(&y, store.get(self.bias))
    }

    pub fn forward_taped(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, params[self.weight])?;
        tape.add(y, params[self.bias])
    }
}

/// Trainable core parameters of one IGLOO-base reduction: the `[p, K, J]` patch
/// filter plus the `[J]` bias.
pub fn igloo_base_core_params(patches: usize, filters: usize, patch_size: usize) -> usize {
    patches * filters * patch_size + patches
}

/// One IGLOO-base block: a causal convolution followed by the patch reduction.
/// Maps `[L, M]` to `[J]` (or `[B, L, M]` to `[B, J]`).
#[derive(Debug, Clone, PartialEq)]
pub struct IglooBase {
    pub conv: Conv1d,
    pub filter: ParamId,
    pub bias: ParamId,
    pub plan: Arc<PatchPlan>,
    pub activation: Activation,
}

impl IglooBase {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        conv: Conv1d,
        plan: Arc<PatchPlan>,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (p, k, j) = (plan.patch_size(), conv.out_channels, plan.patches());
        let filter = store.add(
            format!("{name}.filter"),
            uniform(&[p, k, j], math::sqrt(6.0 / (p * k + 1) as Real), rng),
        );
        let bias = store.add(format!("{name}.patch_bias"), uniform(&[j], BIAS_INIT, rng));
        Ok(Self {
            conv,
            filter,
            bias,
            plan,
            activation,
        })
    }

    pub fn patches(&self) -> usize {
        self.plan.patches()
    }

    /// Patch filter plus bias, excluding the convolution.
    pub fn core_params(&self, store: &ParamStore) -> usize {
        store.get(self.filter).numel() + store.get(self.bias).numel()
    }

    pub fn feature_map(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(store, x)
    }

    /// The reduction applied to a feature map, computed patch by patch from
    /// gathered rows.
    pub fn reduce(&self, store: &ParamStore, f: &Tensor) -> Result<Tensor> {
        let filter = store.get(self.filter);
        let bias = store.get(self.bias);
        let [p, k, j] = *filter.dims() else {
            return Err(Error::Config("patch filter must be rank 3".into()));
        };
        let rank = f.rank();
        if rank < 2 || f.dims()[rank - 1] != k || f.dims()[rank - 2] != self.plan.seq_len() {
            return Err(Error::Config(format!(
                "feature map {} does not match plan L={} and K={k}",
                f.shape(),
                self.plan.seq_len()
            )));
        }
        let mut cols = Vec::with_capacity(j);
        for jj in 0..j {
            let idx: Vec<usize> = self.plan.patch(jj).iter().map(|&i| i as usize).collect();
            let gathered = tensor::gather_time(f, &idx)?;
            let w = tensor::slice(filter, 2, jj, jj + 1)?.reshape(&[p, k])?;
            let prod = tensor::mul(&gathered, &w)?;
            let s = tensor::sum_axes(&prod, &[rank - 2, rank - 1])?;
            let col_dims: Vec<usize> = s.dims().iter().copied().chain([1]).collect();
            cols.push(s.reshape(&col_dims)?);
        }
        let refs: Vec<&Tensor> = cols.iter().collect();
        let u = tensor::concat(&refs, rank - 2)?;
        self.activation.apply(tensor::add(&u, bias)?)
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let f = self.feature_map(store, x)?;
        self.reduce(store, &f)
    }

    pub fn reduce_taped(&self, tape: &mut Tape, params: &[Var], f: Var) -> Result<Var> {
        let u = tape.patch_reduce(f, &self.plan, params[self.filter], params[self.bias])?;
        self.activation.apply_taped(tape, u)
    }

    pub fn forward_taped(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let f = self.conv.forward_taped(tape, params, x)?;
        self.reduce_taped(tape, params, f)
    }
}

/// `d` IGLOO-base blocks on consecutive convolutions: block `i` convolves the
/// feature map of block `i - 1`, and the `d` reductions are concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct IglooStack {
    layers: Vec<IglooBase>,
}

impl IglooStack {
    pub fn new(layers: Vec<IglooBase>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a stack needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].conv.in_channels != pair[0].conv.out_channels {
                return Err(Error::Config(format!(
                    "stacked conv expects {} input channels, previous layer produces {}",
                    pair[1].conv.in_channels, pair[0].conv.out_channels
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[IglooBase] {
        &self.layers
    }

    /// Width of the concatenated output, `sum_i J_i`.
    pub fn output_width(&self) -> usize {
        self.layers.iter().map(IglooBase::patches).sum()
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut f = x.clone();
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            f = layer.feature_map(store, &f)?;
            outs.push(layer.reduce(store, &f)?);
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        tensor::concat(&refs, x.rank() - 2)
    }

    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let axis = tape.value(x).rank() - 2;
        let mut f = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            f = layer.conv.forward_taped(tape, params, f)?;
            f = drop(tape, f, &mut dropout)?;
            outs.push(layer.reduce_taped(tape, params, f)?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        tape.concat(&outs, axis)
    }
}

/// Logit generator of one IGLOO-seq block: consecutive convolutions, each with a
/// per-step patch reduction. Logits from all reductions are concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBlock {
    pub convs: Vec<Conv1d>,
    pub filters: Vec<ParamId>,
    pub biases: Vec<ParamId>,
    pub plans: Vec<Arc<SeqPatchPlan>>,
}

impl SeqBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        convs: Vec<Conv1d>,
        plans: Vec<Arc<SeqPatchPlan>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if convs.is_empty() || convs.len() != plans.len() {
            return Err(Error::Config(format!(
                "{name}: need one plan per conv, got {} convs and {} plans",
                convs.len(),
                plans.len()
            )));
        }
        let mut filters = Vec::with_capacity(convs.len());
        let mut biases = Vec::with_capacity(convs.len());
        for (i, (conv, plan)) in convs.iter().zip(&plans).enumerate() {
            let (p, k, j) = (plan.patch_size(), conv.out_channels, plan.patches());
            filters.push(store.add(
                format!("{name}.stack{i}.filter"),
                uniform(&[p, k, j], math::sqrt(6.0 / (p * k + 1) as Real), rng),
            ));
            biases.push(store.add(format!("{name}.stack{i}.patch_bias"), uniform(&[j], BIAS_INIT, rng)));
        }
        Ok(Self {
            convs,
            filters,
            biases,
            plans,
        })
    }

    pub fn logit_width(&self) -> usize {
        self.plans.iter().map(|p| p.patches()).sum()
    }

    /// First feature map and the per-step logits `U*`, `[.., L, J_total]`.
    pub fn logits(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut f = x.clone();
        let mut first = None;
        let mut parts = Vec::with_capacity(self.convs.len());
        for i in 0..self.convs.len() {
            f = self.convs[i].forward(store, &f)?;
            if first.is_none() {
                first = Some(f.clone());
            }
            parts.push(tensor::seq_patch_reduce(
                &f,
                &self.plans[i],
                store.get(self.filters[i]),
                store.get(self.biases[i]),
            )?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let logits = tensor::concat(&refs, x.rank() - 1)?;
        Ok((first.unwrap_or(f), logits))
    }

    fn logits_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        dropout: &mut Option<&mut Dropout>,
    ) -> Result<(Var, Var)> {
        let axis = tape.value(x).rank() - 1;
        let mut f = x;
        let mut first = None;
        let mut parts = Vec::with_capacity(self.convs.len());
        for i in 0..self.convs.len() {
            f = self.convs[i].forward_taped(tape, params, f)?;
            f = drop(tape, f, dropout)?;
            first.get_or_insert(f);
            parts.push(tape.seq_patch_reduce(
                f,
                &self.plans[i],
                params[self.filters[i]],
                params[self.biases[i]],
            )?);
        }
        let logits = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, axis)?
        };
        Ok((first.unwrap_or(f), logits))
    }
}

/// Attention output for already computed values: `out[t] = sum_j A[t, j] V[t, j]`
/// with `V[t, j, :] = fw[t, :] * B[j or t, :]`. `fw` is `[.., L, Z]`, `attn` is
/// `[.., L, J]`.
pub fn seq_attend(fw: &Tensor, attn: &Tensor, bank: &Tensor, mode: MemoryMode) -> Result<Tensor> {
    let [a, b, z] = *bank.dims() else {
        return Err(Error::Config(format!("memory bank must be rank 3, got {}", bank.shape())));
    };
    let mix = match mode {
        MemoryMode::PerPatch => {
            if a != 1 {
                return Err(Error::Config(format!("per-patch memory bank must be [1, J, Z], got {}", bank.shape())));
            }
            tensor::matmul(attn, &bank.reshape(&[b, z])?)?
        }
        MemoryMode::Literal => {
            if b != 1 {
                return Err(Error::Config(format!("literal memory bank must be [L, 1, Z], got {}", bank.shape())));
            }
            let r = attn.rank();
            let weight = tensor::sum_axes(attn, &[r - 1])?;
            let wdims: Vec<usize> = weight.dims().iter().copied().chain([1]).collect();
            tensor::mul(&weight.reshape(&wdims)?, &bank.reshape(&[a, z])?)?
        }
    };
    tensor::mul(fw, &mix)
}

/// Position-wise feed-forward with its own residual: `y + W2 relu(W1 y + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Dense,
    pub outer: Dense,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            inner: Dense::new(store, &format!("{name}.ffn1"), width, hidden, rng)?,
            outer: Dense::new(store, &format!("{name}.ffn2"), hidden, width, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, y: &Tensor) -> Result<Tensor> {
        let h = tensor::relu(&self.inner.forward(store, y)?)?;
        tensor::add(y, &self.outer.forward(store, &h)?)
    }

    pub fn forward_taped(&self, tape: &mut Tape, params: &[Var], y: Var) -> Result<Var> {
        let h = self.inner.forward_taped(tape, params, y)?;
        let h = tape.relu(h)?;
        let o = self.outer.forward_taped(tape, params, h)?;
        tape.add(y, o)
    }
}

/// One IGLOO-seq layer: `k` attention blocks summed, a residual from the input
/// (projected when its width differs from `Z`), then the feed-forward.
/// Maps `[L, M]` to `[L, Z]` (or batched).
#[derive(Debug, Clone, PartialEq)]
pub struct IglooSeqLayer {
    pub blocks: Vec<SeqBlock>,
    /// Value projection `W`, `[K, Z]`, shared by every block.
    pub value: ParamId,
    /// Memory bank `B`, shared by every block.
    pub bank: ParamId,
    pub mode: MemoryMode,
    pub projection: Option<ParamId>,
    pub ffn: FeedForward,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqLayerDims {
    pub seq_len: usize,
    pub input_dim: usize,
    pub filters: usize,
    pub width: usize,
    pub ffn_hidden: usize,
}

impl IglooSeqLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: SeqLayerDims,
        blocks: Vec<SeqBlock>,
        mode: MemoryMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Config(format!("{name}: need at least one block")));
        };
        let j = first.logit_width();
        for b in &blocks {
            if b.logit_width() != j || b.convs[0].out_channels != dims.filters {
                return Err(Error::Config(format!("{name}: blocks must agree on J and K")));
            }
            if b.convs[0].in_channels != dims.input_dim {
                return Err(Error::Config(format!("{name}: block conv expects {} channels, input has {}", b.convs[0].in_channels, dims.input_dim)));
            }
        }
        let value = store.add(
            format!("{name}.value"),
            uniform(&[dims.filters, dims.width], glorot(dims.filters, dims.width), rng),
        );
        let bank_dims = match mode {
            MemoryMode::PerPatch => [1, j, dims.width],
            MemoryMode::Literal => [dims.seq_len, 1, dims.width],
        };
        let bank = store.add(format!("{name}.bank"), uniform(&bank_dims, BIAS_INIT, rng));
        let projection = (dims.input_dim != dims.width).then(|| {
            store.add(
                format!("{name}.projection"),
                uniform(&[dims.input_dim, dims.width], glorot(dims.input_dim, dims.width), rng),
            )
        });
        let ffn = FeedForward::new(store, name, dims.width, dims.ffn_hidden, rng)?;
        Ok(Self {
            blocks,
            value,
            bank,
            mode,
            projection,
            ffn,
            width: dims.width,
        })
    }

    /// Softmaxed attention `A = softmax(U*)` of every block, `[.., L, J]` each.
    pub fn attention(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
        self.blocks
            .iter()
            .map(|b| tensor::softmax_lastaxis(&b.logits(store, x)?.1))
            .collect()
    }

    /// Summed block outputs before the residual and feed-forward.
    pub fn attend(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut total: Option<Tensor> = None;
        for block in &self.blocks {
            let (f, logits) = block.logits(store, x)?;
            let attn = tensor::softmax_lastaxis(&logits)?;
            let fw = tensor::matmul(&f, store.get(self.value))?;
            let out = seq_attend(&fw, &attn, store.get(self.bank), self.mode)?;
            total = Some(match total {
                Some(t) => tensor::add(&t, &out)?,
                None => out,
            });
        }
        total.ok_or_else(|| Error::Config("seq layer without blocks".into()))
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let out = self.attend(store, x)?;
        let skip = match self.projection {
            Some(p) => tensor::matmul(x, store.get(p))?,
            None => x.clone(),
        };
        let y = tensor::add(&out, &skip)?;
        self.ffn.forward(store, &y)
    }

    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let rank = tape.value(x).rank();
        let mut total: Option<Var> = None;
        for block in &self.blocks {
            let (f, logits) = block.logits_taped(tape, params, x, &mut dropout)?;
            let attn = tape.softmax(logits)?;
            let fw = tape.matmul(f, params[self.value])?;
            // V = tile_J(F W) * B, then out[t] = A[t] . V[t] as a batched [1, J] x [J, Z] product
            let j = tape.value(attn).dims()[rank - 1];
            let tiled = tape.tile(fw, rank - 1, j)?;
            let v = tape.mul(tiled, params[self.bank])?;
            let mut row_dims = tape.value(attn).dims().to_vec();
            row_dims.insert(rank - 1, 1);
            let a = tape.reshape(attn, &row_dims)?;
            let o = tape.matmul(a, v)?;
            let mut out_dims = tape.value(fw).dims().to_vec();
            out_dims[rank - 1] = self.width;
            let o = tape.reshape(o, &out_dims)?;
            total = Some(match total {
                Some(t) => tape.add(t, o)?,
                None => o,
            });
        }
        let out = total.ok_or_else(|| Error::Config("seq layer without blocks".into()))?;
        let skip = match self.projection {
            Some(p) => tape.matmul(x, params[p])?,
            None => x,
        };
        let y = tape.add(out, skip)?;
        self.ffn.forward_taped(tape, params, y)
    }
}

/// Sum of element counts of the tensors whose names start with `prefix`.
pub fn count_with_prefix(store: &ParamStore, prefix: &str) -> usize {
    store
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(_, t)| t.numel())
        .sum()
}

/// Parameter counts grouped by component (the name up to its last `.`).
pub fn param_breakdown(store: &ParamStore) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (name, t) in store.iter() {
        let comp = name.rsplit_once('.').map_or(name, |(c, _)| c);
        match out.iter_mut().find(|(c, _)| c == comp) {
            Some((_, n)) => *n += t.numel(),
            None => out.push((comp.into(), t.numel())),
        }
    }
    out
}
