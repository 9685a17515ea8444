//! Training loop, evaluation and time-to-threshold benchmarking.
//!
//! Wall time comes from a caller-supplied [`Stopwatch`]; it is restarted right
//! before the first optimiser step, so data generation and model construction are
//! not counted. Evaluation happens every `eval_every` steps and the threshold is
//! only checked there, so a crossing time is always an evaluation timestamp.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::layers::Dropout;
use crate::model::{MetricKind, Network, Score};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{substream, Stream};
use crate::tasks::Dataset;
use crate::{Error, Real, Result};

/// Elapsed wall time source.
pub trait Stopwatch {
    fn restart(&mut self);
    fn elapsed_s(&self) -> f64;
}

/// A stopwatch that advances by a fixed amount each time it is read. Useful for
/// deterministic tests.
#[derive(Debug, Clone, Default)]
pub struct TickClock {
    tick: f64,
    reads: core::cell::Cell<u64>,
}

impl TickClock {
    pub fn new(tick: f64) -> Self {
        Self {
            tick,
            reads: core::cell::Cell::new(0),
        }
    }
}

impl Stopwatch for TickClock {
    fn restart(&mut self) {
        self.reads.set(0);
    }

    fn elapsed_s(&self) -> f64 {
        let n = self.reads.get() + 1;
        self.reads.set(n);
        n as f64 * self.tick
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<Real>,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Optional cap in passes over the training set.
    pub max_epochs: Option<usize>,
    pub eval_every: usize,
    /// Batch size used for evaluation.
    pub eval_batch: usize,
    pub seed: u64,
    pub threshold: Option<Threshold>,
}

/// Early-stop target, checked at every evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Eval metric strictly better than the value (above for accuracy, below for MSE).
    Metric(Real),
    /// Eval loss strictly below the value.
    Loss(Real),
}

impl Threshold {
    pub fn crossed_by(self, metric: MetricKind, record: &EvalRecord) -> bool {
        match self {
            Threshold::Metric(t) => metric.crosses(record.eval_metric, t),
            Threshold::Loss(t) => record.eval_loss < t,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            clip_norm: Some(1.0),
            batch_size: 128,
            max_steps: 20_000,
            max_epochs: None,
            eval_every: 100,
            eval_batch: 500,
            seed: 0,
            threshold: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.adam.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be > 0, got {c}")));
            }
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch size, eval interval and eval batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub wall_time_s: f64,
    /// Mean training loss over the steps since the previous record.
    pub train_loss: Real,
    pub eval_loss: Real,
    pub eval_metric: Real,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub step: usize,
    pub wall_time_s: f64,
    pub metric: Real,
    pub loss: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub metric: MetricKind,
    pub records: Vec<EvalRecord>,
    pub crossed: Option<Crossing>,
    /// Optimiser steps taken.
    pub steps: usize,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }
}

/// Training stopped on an error; `metrics` holds everything recorded before it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFailure {
    pub error: Error,
    pub metrics: RunMetrics,
}

impl core::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} (after {} steps)", self.error, self.metrics.steps)
    }
}

/// Mean loss and metric over a whole dataset, in inference mode.
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize) -> Result<Score> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut total = Score::default();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        total.merge(net.score(&data.batch(chunk)?)?);
    }
    Ok(total)
}

struct Batches {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
    epoch: usize,
    seed: u64,
}

impl Batches {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            cursor: 0,
            size: size.min(n),
            epoch: 0,
            seed,
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut substream(self.seed, Stream::Shuffle, self.epoch as u32));
    }

    /// Next batch; a trailing partial batch is skipped.
    fn next(&mut self) -> Vec<usize> {
        if self.cursor + self.size > self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let out = self.order[self.cursor..self.cursor + self.size].to_vec();
        self.cursor += self.size;
        out
    }

    fn peek(&self) -> Vec<usize> {
        self.order[self.cursor..self.cursor + self.size].to_vec()
    }

    fn per_epoch(&self) -> usize {
        self.order.len() / self.size
    }
}

/// Trains `net` with `opt`, evaluating on `eval`. `on_record` sees every record
/// as it is produced, with the network in its state at that point.
pub fn train(
    net: &mut Network,
    opt: &mut Adam,
    train_set: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
    clock: &mut dyn Stopwatch,
    on_record: &mut dyn FnMut(&EvalRecord, &Network) -> Result<()>,
) -> core::result::Result<RunMetrics, TrainFailure> {
    let mut metrics = RunMetrics {
        metric: net.metric(),
        records: Vec::new(),
        crossed: None,
        steps: 0,
    };
    macro_rules! tri {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(TrainFailure { error, metrics }),
            }
        };
    }
    tri!(config.validate());
    let mut batches = Batches::new(train_set.len(), config.batch_size, config.seed);
    let max_steps = match config.max_epochs {
        Some(e) => config.max_steps.min(e * batches.per_epoch()),
        None => config.max_steps,
    };

    let first = tri!(train_set.batch(&batches.peek()));
    let initial_train = tri!(net.score(&first)).loss();
    let score = tri!(evaluate(net, eval, config.eval_batch));
    let record = EvalRecord {
        step: 0,
        epoch: 0,
        wall_time_s: 0.0,
        train_loss: initial_train,
        eval_loss: score.loss(),
        eval_metric: score.metric(),
    };
    tri!(push_record(&mut metrics, record, config.threshold, net, on_record));
    if metrics.crossed.is_some() {
        return Ok(metrics);
    }

    clock.restart();
    let rate = net.config().dropout;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    for step in 1..=max_steps {
        let batch = tri!(train_set.batch(&batches.next()));
        let mut dropout = if rate > 0.0 {
            Some(tri!(Dropout::new(rate, substream(config.seed, Stream::Dropout, step as u32))))
        } else {
            None
        };
        let (loss, grads) = tri!(net.gradients(&batch, dropout.as_mut()));
        if !loss.is_finite() {
            tri!(Err(Error::Numerics(format!("training loss diverged at step {step}"))));
        }
        tri!(opt.step(net.params_mut(), grads, config.clip_norm));
        metrics.steps = step;
        loss_sum += loss;
        loss_n += 1;
        if step % config.eval_every == 0 || step == max_steps {
            let score = tri!(evaluate(net, eval, config.eval_batch));
            let record = EvalRecord {
                step,
                epoch: batches.epoch,
                wall_time_s: clock.elapsed_s(),
                train_loss: loss_sum / loss_n as Real,
                eval_loss: score.loss(),
                eval_metric: score.metric(),
            };
            (loss_sum, loss_n) = (0.0, 0);
            tri!(push_record(&mut metrics, record, config.threshold, net, on_record));
            if metrics.crossed.is_some() {
                break;
            }
        }
    }
    Ok(metrics)
}

fn push_record(
    metrics: &mut RunMetrics,
    record: EvalRecord,
    threshold: Option<Threshold>,
    net: &Network,
    on_record: &mut dyn FnMut(&EvalRecord, &Network) -> Result<()>,
) -> Result<()> {
    if !record.eval_loss.is_finite() {
        return Err(Error::Numerics(format!("evaluation loss diverged at step {}", record.step)));
    }
    metrics.records.push(record);
    on_record(&record, net)?;
    if let Some(t) = threshold {
        if metrics.crossed.is_none() && t.crossed_by(metrics.metric, &record) {
            metrics.crossed = Some(Crossing {
                step: record.step,
                wall_time_s: record.wall_time_s,
                metric: record.eval_metric,
                loss: record.eval_loss,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub run: usize,
    pub time_to_threshold: Option<f64>,
    pub steps_to_threshold: Option<usize>,
    pub steps: usize,
    pub final_metric: Option<Real>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub runs: Vec<BenchRun>,
    pub params: usize,
    /// Mean and sample standard deviation of the time to threshold over the
    /// runs that crossed it.
    pub mean_time: Option<f64>,
    pub std_time: Option<f64>,
    pub failures: usize,
}

impl BenchSummary {
    pub fn from_runs(runs: Vec<BenchRun>, params: usize) -> Self {
        let times: Vec<f64> = runs.iter().filter_map(|r| r.time_to_threshold).collect();
        let failures = runs.len() - times.len();
        let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
        let std = mean.map(|m| {
            if times.len() < 2 {
                0.0
            } else {
                let ss: f64 = times.iter().map(|t| (t - m) * (t - m)).sum();
                libm::sqrt(ss / (times.len() - 1) as f64)
            }
        });
        Self {
            runs,
            params,
            mean_time: mean,
            std_time: std,
            failures,
        }
    }
}

/// Runs `run(i)` for `i in 0..n_runs` and summarises the time to threshold.
/// A run that diverges counts as a failure.
pub fn bench(
    n_runs: usize,
    params: usize,
    mut run: impl FnMut(usize) -> core::result::Result<RunMetrics, TrainFailure>,
) -> Result<BenchSummary> {
    if n_runs == 0 {
        return Err(Error::Config("bench needs at least one run".into()));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let (m, diverged) = match run(i) {
            Ok(m) => (m, false),
            Err(TrainFailure {
                error: Error::Numerics(_),
                metrics,
            }) => (metrics, true),
            Err(f) => return Err(f.error),
        };
        runs.push(BenchRun {
            run: i,
            time_to_threshold: m.crossed.map(|c| c.wall_time_s),
            steps_to_threshold: m.crossed.map(|c| c.step),
            steps: m.steps,
            final_metric: m.last().map(|r| r.eval_metric),
            diverged,
        });
    }
    Ok(BenchSummary::from_runs(runs, params))
}
