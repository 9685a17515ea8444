//! Complete networks: an IGLOO encoder followed by a dense head.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::layers::{
    igloo_base_core_params, Activation, Conv1d, Dense, Dropout, IglooBase, IglooSeqLayer, IglooStack,
    MemoryMode, SeqBlock, SeqLayerDims,
};
use crate::plan::{
    make_causal_seq_plan, make_deterministic_plan, make_deterministic_seq_plan, make_random_plan,
    make_uniform_seq_plan, PatchPlan, SeqPatchPlan,
};
use crate::rng::{derive_seed, substream, Stream};
use crate::tasks::{Batch, BatchTargets};
use crate::tensor::{self, Tensor};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasePlacement {
    Random,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeqPlacement {
    Gaussian { sigma: Real },
    Uniform,
    Deterministic,
}

/// IGLOO-base encoder: `stacks` consecutive convolutions of `filters` channels,
/// each feeding a reduction over `patches` patches of `patch_size` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseConfig {
    pub patches: usize,
    pub patch_size: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub stacks: usize,
    pub activation: Activation,
    pub placement: BasePlacement,
}

/// IGLOO-seq encoder: `depth` residual layers of width `width`, each summing
/// `blocks` attention blocks whose logit generators have `stacks` convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqConfig {
    pub patches: usize,
    pub patch_size: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub width: usize,
    pub stacks: usize,
    pub blocks: usize,
    pub depth: usize,
    pub memory: MemoryMode,
    pub placement: SeqPlacement,
    pub ffn_hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderConfig {
    Base(BaseConfig),
    Seq(SeqConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadConfig {
    /// `groups` independent `classes`-way predictions per sequence.
    Classify { groups: usize, classes: usize },
    /// `outputs` real values per sequence, trained with MSE.
    Regress { outputs: usize },
    /// One `classes`-way prediction per time step (IGLOO-seq only).
    PerStep { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub input_dim: usize,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    /// Spatial dropout on convolution feature maps during training.
    pub dropout: Real,
}

/// The task metric reported by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Mse,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy)
    }

    /// Strictly better than `threshold`.
    pub fn crosses(self, value: Real, threshold: Real) -> bool {
        if self.higher_is_better() {
            value > threshold
        } else {
            value < threshold
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mse => "mse",
        }
    }
}

/// A patch plan owned by a network, in construction order.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Global(Arc<PatchPlan>),
    PerStep(Arc<SeqPatchPlan>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Base(IglooStack),
    Seq(Vec<IglooSeqLayer>),
}

/// Summed loss and metric over the rows of one or more batches.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Score {
    pub loss_sum: Real,
    pub metric_sum: Real,
    pub rows: usize,
}

impl Score {
    pub fn merge(&mut self, other: Score) {
        self.loss_sum += other.loss_sum;
        self.metric_sum += other.metric_sum;
        self.rows += other.rows;
    }

    pub fn loss(&self) -> Real {
        self.loss_sum / self.rows as Real
    }

    pub fn metric(&self) -> Real {
        self.metric_sum / self.rows as Real
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    head: Dense,
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be >= 1")));
    }
    Ok(())
}

impl Network {
    /// Builds a freshly initialised network. Weights come from the `Init`
    /// substream of `seed`, patch plans from the `Patches` substream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        positive("sequence length", config.seq_len)?;
        positive("input width", config.input_dim)?;
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", config.dropout)));
        }
        let mut store = ParamStore::new();
        let mut rng = substream(seed, Stream::Init, 0);
        let mut plan_index = 0u32;
        let mut next_seed = || {
            plan_index += 1;
            derive_seed(seed, Stream::Patches, plan_index - 1)
        };
        let l = config.seq_len;
        let (encoder, rep_width) = match &config.encoder {
            EncoderConfig::Base(c) => {
                positive("stacks", c.stacks)?;
                let mut layers = Vec::with_capacity(c.stacks);
                let mut in_ch = config.input_dim;
                for i in 0..c.stacks {
                    let conv = Conv1d::new(&mut store, &format!("base.{i}.conv"), c.kernel_width, in_ch, c.filters, &mut rng)?;
                    let plan = match c.placement {
                        BasePlacement::Random => make_random_plan(l, c.patches, c.patch_size, next_seed())?,
                        BasePlacement::Deterministic => make_deterministic_plan(l, c.patches, c.patch_size)?,
                    };
                    layers.push(IglooBase::new(&mut store, &format!("base.{i}"), conv, Arc::new(plan), c.activation, &mut rng)?);
                    in_ch = c.filters;
                }
                let stack = IglooStack::new(layers)?;
                let w = stack.output_width();
                (Encoder::Base(stack), w)
            }
            EncoderConfig::Seq(c) => {
                positive("stacks", c.stacks)?;
                positive("blocks", c.blocks)?;
                positive("depth", c.depth)?;
                positive("patches", c.patches)?;
                let mut layers = Vec::with_capacity(c.depth);
                let mut in_ch = config.input_dim;
                for d in 0..c.depth {
                    let mut blocks = Vec::with_capacity(c.blocks);
                    for b in 0..c.blocks {
                        let name = format!("seq.{d}.block{b}");
                        let mut convs = Vec::with_capacity(c.stacks);
                        let mut plans = Vec::with_capacity(c.stacks);
                        let mut ch = in_ch;
                        for s in 0..c.stacks {
                            convs.push(Conv1d::new(&mut store, &format!("{name}.conv{s}"), c.kernel_width, ch, c.filters, &mut rng)?);
                            ch = c.filters;
                            let plan = match c.placement {
                                SeqPlacement::Gaussian { sigma } => {
                                    make_causal_seq_plan(l, c.patches, c.patch_size, sigma, next_seed())?
                                }
                                SeqPlacement::Uniform => make_uniform_seq_plan(l, c.patches, c.patch_size, next_seed())?,
                                SeqPlacement::Deterministic => make_deterministic_seq_plan(l, c.patches, c.patch_size)?,
                            };
                            plans.push(Arc::new(plan));
                        }
                        blocks.push(SeqBlock::new(&mut store, &name, convs, plans, &mut rng)?);
                    }
                    let dims = SeqLayerDims {
                        seq_len: l,
                        input_dim: in_ch,
                        filters: c.filters,
                        width: c.width,
                        ffn_hidden: c.ffn_hidden,
                    };
                    layers.push(IglooSeqLayer::new(&mut store, &format!("seq.{d}"), dims, blocks, c.memory, &mut rng)?);
                    in_ch = c.width;
                }
                (Encoder::Seq(layers), c.width)
            }
        };
        let head_out = match (config.head, &encoder) {
            (HeadConfig::Classify { groups, classes }, _) => {
                positive("groups", groups)?;
                positive("classes", classes)?;
                groups * classes
            }
            (HeadConfig::Regress { outputs }, _) => {
                positive("outputs", outputs)?;
                outputs
            }
            (HeadConfig::PerStep { classes }, Encoder::Seq(_)) => {
                positive("classes", classes)?;
                classes
            }
            (HeadConfig::PerStep { .. }, Encoder::Base(_)) => {
                return Err(Error::Config("per-step head needs an IGLOO-seq encoder".into()))
            }
        };
        let head = Dense::new(&mut store, "head", rep_width, head_out, &mut rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn metric(&self) -> MetricKind {
        match self.config.head {
            HeadConfig::Regress { .. } => MetricKind::Mse,
            _ => MetricKind::Accuracy,
        }
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.total_elements()
    }

    /// `J*K*p + J` for every IGLOO reduction, in construction order.
    pub fn core_param_counts(&self) -> Vec<usize> {
        match &self.encoder {
            Encoder::Base(stack) => stack.layers().iter().map(|l| l.core_params(&self.store)).collect(),
            Encoder::Seq(layers) => layers
                .iter()
                .flat_map(|layer| &layer.blocks)
                .flat_map(|b| b.plans.iter().zip(&b.convs))
                .map(|(p, c)| igloo_base_core_params(p.patches(), c.out_channels, p.patch_size()))
                .collect(),
        }
    }

    pub fn plans(&self) -> Vec<Plan> {
        match &self.encoder {
            Encoder::Base(stack) => stack.layers().iter().map(|l| Plan::Global(Arc::clone(&l.plan))).collect(),
            Encoder::Seq(layers) => layers
                .iter()
                .flat_map(|layer| &layer.blocks)
                .flat_map(|b| b.plans.iter().map(|p| Plan::PerStep(Arc::clone(p))))
                .collect(),
        }
    }

    /// Replaces every patch plan, e.g. with plans restored from a checkpoint.
    /// Each replacement must have the same kind and dimensions as the original.
    pub fn set_plans(&mut self, plans: Vec<Plan>) -> Result<()> {
        let current = self.plans();
        if plans.len() != current.len() {
            return Err(Error::Config(format!("expected {} plans, got {}", current.len(), plans.len())));
        }
        for (old, new) in current.iter().zip(&plans) {
            let ok = match (old, new) {
                (Plan::Global(a), Plan::Global(b)) => {
                    (a.seq_len(), a.patches(), a.patch_size()) == (b.seq_len(), b.patches(), b.patch_size())
                }
                (Plan::PerStep(a), Plan::PerStep(b)) => {
                    (a.seq_len(), a.patches(), a.patch_size()) == (b.seq_len(), b.patches(), b.patch_size())
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Config("replacement plan does not match the model".into()));
            }
        }
        let mut it = plans.into_iter();
        match &mut self.encoder {
            Encoder::Base(stack) => {
                let mut layers = stack.layers().to_vec();
                for l in &mut layers {
                    if let Some(Plan::Global(p)) = it.next() {
                        l.plan = p;
                    }
                }
                *stack = IglooStack::new(layers)?;
            }
            Encoder::Seq(layers) => {
                for b in layers.iter_mut().flat_map(|l| &mut l.blocks) {
                    for slot in &mut b.plans {
                        if let Some(Plan::PerStep(p)) = it.next() {
                            *slot = p;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Encoder representation: `[B, d*J]` for IGLOO-base, `[B, L, Z]` for IGLOO-seq.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        match &self.encoder {
            Encoder::Base(stack) => stack.forward(&self.store, x),
            Encoder::Seq(layers) => {
                let mut h = x.clone();
                for layer in layers {
                    h = layer.forward(&self.store, &h)?;
                }
                Ok(h)
            }
        }
    }

    fn reads_last_step(&self) -> bool {
        matches!(
            (&self.encoder, self.config.head),
            (Encoder::Seq(_), HeadConfig::Classify { .. } | HeadConfig::Regress { .. })
        )
    }

    /// Eager forward of a batch `x: [B, L, M]`, same rows as [`Network::forward_taped`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.dims()[0];
        let mut rep = self.encode(x)?;
        if self.reads_last_step() {
            let l = self.config.seq_len;
            rep = tensor::slice(&rep, 1, l - 1, l)?.reshape(&[batch, self.head.in_features])?;
        }
        let out = self.head.forward(&self.store, &rep)?;
        let rows = self.rows_dims(out.dims());
        out.reshape(&rows)
    }

    fn rows_dims(&self, out: &[usize]) -> Vec<usize> {
        let total: usize = out.iter().product();
        match self.config.head {
            HeadConfig::Classify { classes, .. } | HeadConfig::PerStep { classes } => {
                alloc::vec![total / classes, classes]
            }
            HeadConfig::Regress { outputs } => alloc::vec![total / outputs, outputs],
        }
    }

    /// Records the forward pass of a batch `x: [B, L, M]`. Output rows:
    /// `[B * groups, classes]` for classification, `[B * L, classes]` per step,
    /// `[B, outputs]` for regression.
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let rep = match &self.encoder {
            Encoder::Base(stack) => stack.forward_taped(tape, params, x, dropout)?,
            Encoder::Seq(layers) => {
                let mut h = x;
                for layer in layers {
                    h = layer.forward_taped(tape, params, h, dropout.as_deref_mut())?;
                }
                h
            }
        };
        let batch = tape.value(x).dims()[0];
        let rep = if self.reads_last_step() {
            let l = self.config.seq_len;
            let last = tape.slice(rep, 1, l - 1, l)?;
            tape.reshape(last, &[batch, self.head.in_features])?
        } else {
            rep
        };
        let out = self.head.forward_taped(tape, params, rep)?;
        let rows = self.rows_dims(tape.value(out).dims());
        tape.reshape(out, &rows)
    }

    /// Records forward pass and loss; returns `(loss, output rows)`.
    pub fn loss_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        dropout: Option<&mut Dropout>,
    ) -> Result<(Var, Var)> {
        let x = tape.constant(batch.inputs.clone());
        let out = self.forward_taped(tape, params, x, dropout)?;
        let loss = match &batch.targets {
            BatchTargets::Classes(t) => tape.softmax_cross_entropy(out, t)?,
            BatchTargets::Values(v) => {
                let target = tape.constant(v.clone());
                tape.mse(out, target)?
            }
        };
        Ok((loss, out))
    }

    /// Loss and dense per-parameter gradients for one batch.
    pub fn gradients(&self, batch: &Batch, dropout: Option<&mut Dropout>) -> Result<(Real, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let (loss, _) = self.loss_taped(&mut tape, &params, batch, dropout)?;
        let value = tape.value(loss).item()?;
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        Ok((value, grads.dense(&self.store)))
    }

    /// Inference-mode loss and metric sums for one batch.
    pub fn score(&self, batch: &Batch) -> Result<Score> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let (_, out) = self.loss_taped(&mut tape, &params, batch, None)?;
        score_outputs(tape.value(out), &batch.targets)
    }
}

/// Loss and metric sums of predictions `out` (rows as produced by
/// [`Network::forward_taped`]) against `targets`.
pub fn score_outputs(out: &Tensor, targets: &BatchTargets) -> Result<Score> {
    match targets {
        BatchTargets::Classes(t) => {
            let (mean, _) = tensor::softmax_cross_entropy(out, t)?;
            let c = out.dims()[1];
            let correct = out
                .data()
                .chunks(c)
                .zip(t)
                .filter(|(row, &label)| argmax(row) == label)
                .count();
            Ok(Score {
                loss_sum: mean * t.len() as Real,
                metric_sum: correct as Real,
                rows: t.len(),
            })
        }
        BatchTargets::Values(v) => {
            let mean = tensor::mse(out, v)?;
            let n = v.numel();
            Ok(Score {
                loss_sum: mean * n as Real,
                metric_sum: mean * n as Real,
                rows: n,
            })
        }
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
