//! The subcommands. Each takes a resolved [`RunConfig`] and writes its
//! artefacts under [`RunConfig::out_dir`].

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use igloo_core::autodiff::{grad_check, GradCheckOptions, GradCheckReport, GradientFault, OpKind};
use igloo_core::model::{MetricKind, ModelConfig, Network, Score};
use igloo_core::optim::Adam;
use igloo_core::tasks::{addition_split, copy_memory_split, COPY_RECALL};
use igloo_core::trainer::{self, BenchSummary, EvalRecord, RunMetrics, Stopwatch, TrainFailure};
use igloo_core::{Error, Real};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Task};
use crate::data::{self, TaskData};
use crate::{HarnessError, Result};

/// Wall-clock [`Stopwatch`].
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Stopwatch for WallClock {
    fn restart(&mut self) {
        self.0 = Instant::now();
    }

    fn elapsed_s(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub const METRICS_HEADER: [&str; 6] = ["step", "epoch", "wall_time_s", "train_loss", "eval_loss", "eval_metric"];

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let echo = dir.join("config.txt");
    std::fs::write(&echo, cfg.to_text()).map_err(|e| HarnessError::io(&echo, e))?;
    Ok(dir)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn prepare(cfg: &RunConfig) -> Result<(TaskData, ModelConfig)> {
    let data = data::load_task(cfg)?;
    let model = data::model_config(cfg, &data)?;
    Ok((data, model))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: RunMetrics,
    pub params: usize,
    /// Parameters of each IGLOO reduction, excluding convolutions and head.
    pub core_params: Vec<usize>,
    pub out_dir: PathBuf,
}

fn better(kind: MetricKind, new: Real, old: Real) -> bool {
    if kind.higher_is_better() {
        new > old
    } else {
        new < old
    }
}

/// Trains from scratch, writing `metrics.csv`, `best.ckpt` and `final.ckpt`.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    let dir = out_dir(cfg)?;
    let (data, model) = prepare(cfg)?;
    let tc = data::train_config(cfg);
    let mut net = Network::new(model, cfg.seed)?;
    let mut opt = Adam::new(tc.adam, net.params())?;
    let text = cfg.to_text();
    println!(
        "task {} | {} train / {} eval samples | {} parameters (IGLOO cores {:?})",
        cfg.task,
        data.train.len(),
        data.eval.len(),
        net.param_count(),
        net.core_param_counts()
    );

    let metrics_path = dir.join("metrics.csv");
    let mut csv = csv_writer(&metrics_path)?;
    csv.write_record(METRICS_HEADER)?;
    csv.flush().map_err(|e| HarnessError::io(&metrics_path, e))?;
    let best_path = dir.join("best.ckpt");
    let kind = net.metric();
    let mut best: Option<Real> = None;
    let mut stash: Option<HarnessError> = None;
    let mut on_record = |r: &EvalRecord, net: &Network| -> igloo_core::Result<()> {
        println!(
            "step {:>6} epoch {:>3} {:>8.1}s train_loss {:.5} eval_loss {:.5} {} {:.5}",
            r.step,
            r.epoch,
            r.wall_time_s,
            r.train_loss,
            r.eval_loss,
            kind.name(),
            r.eval_metric
        );
        let mut io = || -> Result<()> {
            csv.write_record(&[
                r.step.to_string(),
                r.epoch.to_string(),
                format!("{:.6}", r.wall_time_s),
                r.train_loss.to_string(),
                r.eval_loss.to_string(),
                r.eval_metric.to_string(),
            ])?;
            csv.flush().map_err(|e| HarnessError::io(&metrics_path, e))?;
            if best.is_none_or(|b| better(kind, r.eval_metric, b)) {
                best = Some(r.eval_metric);
                Checkpoint::capture(net, &text, None).save(&best_path)?;
            }
            Ok(())
        };
        io().map_err(|e| {
            let msg = e.to_string();
            stash = Some(e);
            Error::Data(msg)
        })
    };
    let result = trainer::train(
        &mut net,
        &mut opt,
        &data.train,
        &data.eval,
        &tc,
        &mut WallClock::start(),
        &mut on_record,
    );
    if let Some(e) = stash {
        return Err(e);
    }
    let metrics = match result {
        Ok(m) => m,
        Err(TrainFailure {
            error: Error::Numerics(msg),
            metrics,
        }) => {
            eprintln!(
                "diverged after {} steps; {} records kept in {}",
                metrics.steps,
                metrics.records.len(),
                metrics_path.display()
            );
            return Err(HarnessError::Diverged(msg));
        }
        Err(f) => return Err(f.error.into()),
    };
    Checkpoint::capture(&net, &text, Some(&opt)).save(&dir.join("final.ckpt"))?;
    match metrics.crossed {
        Some(c) => println!(
            "threshold crossed at step {} after {:.1}s ({} {:.5}, loss {:.5})",
            c.step,
            c.wall_time_s,
            kind.name(),
            c.metric,
            c.loss
        ),
        None if tc.threshold.is_some() => println!("threshold not reached in {} steps", metrics.steps),
        None => {}
    }
    Ok(TrainReport {
        params: net.param_count(),
        core_params: net.core_param_counts(),
        metrics,
        out_dir: dir,
    })
}

/// Restores a checkpoint and scores its evaluation set. `overrides` are
/// applied on top of the configuration stored in the checkpoint.
pub fn eval(checkpoint: &Path, overrides: &[(String, String)]) -> Result<(Score, MetricKind)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = RunConfig::parse(&ckpt.config)?;
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    let (data, model) = prepare(&cfg)?;
    let net = ckpt.restore(model)?;
    let score = trainer::evaluate(&net, &data.eval, cfg.eval_batch)?;
    let kind = net.metric();
    println!(
        "{}: {} eval samples | eval_loss {:.6} | {} {:.6}",
        checkpoint.display(),
        score.rows,
        score.loss(),
        kind.name(),
        score.metric()
    );
    Ok((score, kind))
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `bench.runs` independent trainings on one dataset, seeds `seed + i`.
pub fn bench(cfg: &RunConfig) -> Result<BenchSummary> {
    if data::threshold(cfg).is_none() {
        return Err(HarnessError::Config(format!(
            "bench needs train.threshold; task {} has no default",
            cfg.task
        )));
    }
    let dir = out_dir(cfg)?;
    let (data, model) = prepare(cfg)?;
    let probe = Network::new(model.clone(), cfg.seed)?;
    let (params, kind) = (probe.param_count(), probe.metric());
    let summary = trainer::bench(cfg.bench_runs, params, |i| {
        let seed = cfg.seed.wrapping_add(i as u64);
        let tc = trainer::TrainConfig {
            seed,
            ..data::train_config(cfg)
        };
        let fail = |error: Error| TrainFailure {
            error,
            metrics: RunMetrics {
                metric: kind,
                records: Vec::new(),
                crossed: None,
                steps: 0,
            },
        };
        let mut net = Network::new(model.clone(), seed).map_err(fail)?;
        let mut opt = Adam::new(tc.adam, net.params()).map_err(fail)?;
        let m = trainer::train(
            &mut net,
            &mut opt,
            &data.train,
            &data.eval,
            &tc,
            &mut WallClock::start(),
            &mut |_, _| Ok(()),
        );
        match &m {
            Ok(m) => println!(
                "run {i}: {}",
                m.crossed.map_or_else(
                    || format!("no crossing in {} steps", m.steps),
                    |c| format!("crossed at step {} after {:.2}s", c.step, c.wall_time_s)
                )
            ),
            Err(f) => println!("run {i}: {}", f),
        }
        m
    })?;

    let path = dir.join("bench.csv");
    let mut csv = csv_writer(&path)?;
    csv.write_record([
        "run",
        "time_to_threshold_s",
        "steps_to_threshold",
        "steps",
        "final_metric",
        "diverged",
        "mean_time_s",
        "std_time_s",
        "failures",
        "params",
    ])?;
    for r in &summary.runs {
        csv.write_record(&[
            r.run.to_string(),
            opt_cell(r.time_to_threshold),
            opt_cell(r.steps_to_threshold),
            r.steps.to_string(),
            opt_cell(r.final_metric),
            r.diverged.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    csv.write_record(&[
        "summary".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        opt_cell(summary.mean_time),
        opt_cell(summary.std_time),
        summary.failures.to_string(),
        summary.params.to_string(),
    ])?;
    csv.flush().map_err(|e| HarnessError::io(&path, e))?;

    println!("{:>5} {:>12} {:>8} {:>8}", "run", "time (s)", "steps", "final");
    for r in &summary.runs {
        let time = r.time_to_threshold.map_or("-".into(), |t| format!("{t:.2}"));
        let steps = r.steps_to_threshold.map_or("-".into(), |s| s.to_string());
        let fin = r.final_metric.map_or("-".into(), |m| format!("{m:.4}"));
        println!("{:>5} {:>12} {:>8} {:>8}", r.run, time, steps, fin);
    }
    let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}"));
    println!(
        "time to threshold: {} ± {} s over {} runs, {} failures, {} parameters",
        fmt(summary.mean_time),
        fmt(summary.std_time),
        summary.runs.len() - summary.failures,
        summary.failures,
        summary.params
    );
    Ok(summary)
}

/// Command-line names of the ops whose backward rule can be corrupted.
pub const FAULT_OPS: &[(&str, OpKind)] = &[
    ("add", OpKind::Add),
    ("sub", OpKind::Sub),
    ("mul", OpKind::Mul),
    ("scale", OpKind::Scale),
    ("matmul", OpKind::Matmul),
    ("relu", OpKind::Relu),
    ("sum", OpKind::SumAxes),
    ("tile", OpKind::Tile),
    ("transpose", OpKind::Transpose),
    ("slice", OpKind::Slice),
    ("reshape", OpKind::Reshape),
    ("concat", OpKind::Concat),
    ("softmax", OpKind::Softmax),
    ("gather", OpKind::GatherTime),
    ("conv", OpKind::CausalConv),
    ("patch-reduce", OpKind::PatchReduce),
    ("seq-patch-reduce", OpKind::SeqPatchReduce),
    ("cross-entropy", OpKind::SoftmaxCrossEntropy),
    ("mse", OpKind::Mse),
];

/// Longest sequence the gradient check accepts.
pub const GRADCHECK_MAX_LEN: usize = 64;

/// Finite-difference check of every parameter of the configured model on the
/// first `gradcheck.batch` training samples.
pub fn gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    let (data, model) = prepare(cfg)?;
    if model.seq_len > GRADCHECK_MAX_LEN {
        return Err(HarnessError::Config(format!(
            "gradcheck needs sequences of at most {GRADCHECK_MAX_LEN} steps, task {} has {}",
            cfg.task, model.seq_len
        )));
    }
    let fault = match &cfg.gc_fault {
        None => None,
        Some(name) => {
            let op = FAULT_OPS.iter().find(|(n, _)| n == name).map(|&(_, op)| op).ok_or_else(|| {
                let names: Vec<&str> = FAULT_OPS.iter().map(|(n, _)| *n).collect();
                HarnessError::Config(format!("unknown op `{name}` for gradcheck.fault; expected one of {}", names.join(", ")))
            })?;
            Some(GradientFault {
                op,
                factor: cfg.gc_fault_factor as Real,
            })
        }
    };
    let net = Network::new(model, cfg.seed)?;
    let n = cfg.gc_batch.min(data.train.len());
    let batch = data.train.batch(&(0..n).collect::<Vec<_>>())?;
    let options = GradCheckOptions {
        step: cfg.gc_step as Real,
        tolerance: cfg.gc_tolerance as Real,
        max_probes: cfg.gc_probes,
        probe_seed: cfg.seed,
        fault,
    };
    let mut store = net.params().clone();
    let report = grad_check(&mut store, &options, |tape, p| Ok(net.loss_taped(tape, p, &batch, None)?.0))?;

    let width = report.tensors.iter().map(|t| t.name.len()).max().unwrap_or(6).max(6);
    println!("{:<width$} {:>7} {:>12} {:>12}  status", "tensor", "probes", "rel error", "max |grad|");
    for t in &report.tensors {
        let status = if t.is_degenerate() {
            "degenerate"
        } else if t.passed(report.tolerance) {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{:<width$} {:>7} {:>12.3e} {:>12.3e}  {status}",
            t.name, t.probes, t.max_rel_error, t.max_abs_grad
        );
    }
    println!(
        "loss {:.6} | worst relative error {:.3e} | tolerance {:.1e}",
        report.loss,
        report.worst(),
        report.tolerance
    );
    if !report.passed() {
        let failed: Vec<&str> = report
            .tensors
            .iter()
            .filter(|t| !t.passed(report.tolerance))
            .map(|t| t.name.as_str())
            .collect();
        return Err(HarnessError::GradCheck(format!(
            "{} exceed tolerance {:.1e}",
            failed.join(", "),
            report.tolerance
        )));
    }
    Ok(report)
}

/// Writes the generated data of the configured task and returns the files.
pub fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = out_dir(cfg)?;
    let mut files = Vec::new();
    match cfg.task {
        Task::Copy => {
            let (train, test) = copy_memory_split(cfg.copy_t, cfg.copy_train, cfg.copy_test, cfg.seed)?;
            let l = train.seq_len();
            for (name, set) in [("train.csv", &train), ("test.csv", &test)] {
                let path = dir.join(name);
                let mut csv = csv_writer(&path)?;
                let header: Vec<String> = (0..l)
                    .map(|t| format!("x{t}"))
                    .chain((0..COPY_RECALL).map(|k| format!("y{k}")))
                    .collect();
                csv.write_record(&header)?;
                for i in 0..set.len() {
                    let targets = &set.targets[i * COPY_RECALL..(i + 1) * COPY_RECALL];
                    csv.write_record(set.sample(i).iter().chain(targets).map(u8::to_string))?;
                }
                csv.flush().map_err(|e| HarnessError::io(&path, e))?;
                files.push(path);
            }
        }
        Task::Addition => {
            let (train, test) = addition_split(cfg.addition_t, cfg.addition_train, cfg.addition_test, cfg.seed)?;
            let l = cfg.addition_t;
            for (name, set) in [("train.csv", &train), ("test.csv", &test)] {
                let path = dir.join(name);
                let mut csv = csv_writer(&path)?;
                let header: Vec<String> = (0..l)
                    .flat_map(|t| [format!("v{t}"), format!("m{t}")])
                    .chain(["y".to_string()])
                    .collect();
                csv.write_record(&header)?;
                for (x, y) in set.inputs.chunks(2 * l).zip(&set.targets) {
                    csv.write_record(x.iter().chain([y]).map(Real::to_string))?;
                }
                csv.flush().map_err(|e| HarnessError::io(&path, e))?;
                files.push(path);
            }
        }
        Task::Pmnist => {
            let perm = data::load_mnist(cfg)?.permutation.expect("pmnist data is permuted");
            let path = dir.join("permutation.csv");
            let mut csv = csv_writer(&path)?;
            csv.write_record(["position", "source_pixel"])?;
            for (k, src) in perm.iter().enumerate() {
                csv.write_record([k.to_string(), src.to_string()])?;
            }
            csv.flush().map_err(|e| HarnessError::io(&path, e))?;
            files.push(path);
        }
        Task::Charlm => {
            let corpus = data::load_corpus(cfg)?;
            let path = dir.join("vocab.csv");
            let mut csv = csv_writer(&path)?;
            csv.write_record(["id", "codepoint", "char"])?;
            for id in 0..corpus.vocab.len() {
                let c = corpus.vocab.char(id as u8).expect("id below vocab size");
                let shown = if c.is_control() || c == ' ' { format!("{c:?}") } else { c.to_string() };
                csv.write_record([id.to_string(), format!("U+{:04X}", c as u32), shown])?;
            }
            csv.flush().map_err(|e| HarnessError::io(&path, e))?;
            files.push(path);
        }
        Task::Mnist => {
            return Err(HarnessError::Config(
                "task mnist reads its data from disk; nothing to generate".into(),
            ))
        }
    }
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(files)
}
