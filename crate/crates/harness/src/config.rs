//! Run configuration: a flat `key = value` file with dotted sections, plus
//! command-line overrides. Every key has a default; unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use igloo_core::layers::{Activation, MemoryMode};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Copy,
    Addition,
    Mnist,
    Pmnist,
    Charlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// IGLOO-seq for the char-LM, IGLOO-base otherwise.
    Auto,
    Base,
    Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementSetting {
    /// Random for IGLOO-base, gaussian for IGLOO-seq.
    Auto,
    Random,
    Deterministic,
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSetting {
    /// Accuracy 0.99 for copy, MSE 0.01 for addition, none otherwise.
    Auto,
    Off,
    Metric(f64),
    Loss(f64),
}

/// A value that can appear on the right of `key = value`.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64, String);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "none" | "auto" => Ok(None),
            _ => T::parse_value(s).map(Some),
        }
    }
    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "none".into(), T::render)
    }
}

macro_rules! word_value {
    ($t:ty { $($word:literal => $v:expr),* $(,)? }) => {
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                match s {
                    $($word => Ok($v),)*
                    _ => Err(format!("expected one of: {}", [$($word),*].join(", "))),
                }
            }
            fn render(&self) -> String {
                $(if *self == $v { return $word.into(); })*
                unreachable!()
            }
        }
    };
}

word_value!(Task { "copy" => Task::Copy, "addition" => Task::Addition, "mnist" => Task::Mnist, "pmnist" => Task::Pmnist, "charlm" => Task::Charlm });
word_value!(ModelKind { "auto" => ModelKind::Auto, "base" => ModelKind::Base, "seq" => ModelKind::Seq });
word_value!(Activation { "relu" => Activation::Relu, "identity" => Activation::Identity });
word_value!(MemoryMode { "per-patch" => MemoryMode::PerPatch, "literal" => MemoryMode::Literal });
word_value!(PlacementSetting {
    "auto" => PlacementSetting::Auto,
    "random" => PlacementSetting::Random,
    "deterministic" => PlacementSetting::Deterministic,
    "gaussian" => PlacementSetting::Gaussian,
    "uniform" => PlacementSetting::Uniform,
});

impl ConfigValue for ThresholdSetting {
    fn parse_value(s: &str) -> Result<Self, String> {
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{e}"));
        match s {
            "auto" => Ok(Self::Auto),
            "none" => Ok(Self::Off),
            _ => match s.split_once(':') {
                Some(("metric", v)) => num(v).map(Self::Metric),
                Some(("loss", v)) => num(v).map(Self::Loss),
                Some(_) => Err("expected auto, none, metric:<x>, loss:<x> or a number".into()),
                None => num(s).map(Self::Metric),
            },
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Auto => "auto".into(),
            Self::Off => "none".into(),
            Self::Metric(v) => format!("metric:{v}"),
            Self::Loss(v) => format!("loss:{v}"),
        }
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::parse_value(s)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

macro_rules! run_config {
    ($( $field:ident : $t:ty = $default:expr, $key:literal, $doc:literal; )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $field: $t,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        /// Every key with its documentation, in file order.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        impl RunConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
                let bad = |e: String| HarnessError::Config(format!("invalid value `{value}` for `{key}`: {e}"));
                match key {
                    $($key => self.$field = <$t as ConfigValue>::parse_value(value).map_err(bad)?,)*
                    _ => return Err(HarnessError::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$field.render()),)*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    task: Task = Task::Copy, "task", "copy | addition | mnist | pmnist | charlm";
    seed: u64 = 0, "seed", "root seed; data, init, patches, dropout and shuffling use separate substreams";

    model_kind: ModelKind = ModelKind::Auto, "model.kind", "auto | base | seq (auto: seq for charlm, base otherwise)";
    patches: usize = 100, "model.J", "patches per IGLOO reduction";
    patch_size: usize = 4, "model.p", "time slices per patch";
    filters: usize = 5, "model.K", "conv filters";
    kernel_width: usize = 3, "model.w", "conv kernel width";
    width: usize = 32, "model.Z", "IGLOO-seq model width";
    stacks: usize = 1, "model.stacks", "successive conv layers, each with its own reduction";
    blocks: usize = 1, "model.blocks", "IGLOO-seq attention blocks summed per layer";
    depth: usize = 1, "model.depth", "IGLOO-seq residual layers";
    memory: MemoryMode = MemoryMode::PerPatch, "model.memory", "per-patch | literal memory bank";
    placement: PlacementSetting = PlacementSetting::Auto, "model.placement", "auto | random | deterministic | gaussian | uniform";
    sigma: f64 = 8.0, "model.sigma", "spread of gaussian per-step patches";
    activation: Activation = Activation::Relu, "model.activation", "relu | identity (IGLOO-base output)";
    dropout: f64 = 0.0, "model.dropout", "spatial dropout rate on conv feature maps";
    ffn_hidden: Option<usize> = None, "model.ffn_hidden", "feed-forward hidden width (none: 4 Z)";

    lr: f64 = 0.005, "train.lr", "Adam learning rate";
    beta1: f64 = 0.9, "train.beta1", "Adam first-moment decay";
    beta2: f64 = 0.999, "train.beta2", "Adam second-moment decay";
    eps: f64 = 1e-8, "train.eps", "Adam epsilon";
    clip_norm: Option<f64> = Some(1.0), "train.clip_norm", "global gradient-norm bound (none disables)";
    batch_size: usize = 128, "train.batch_size", "training batch size";
    max_steps: usize = 20_000, "train.max_steps", "optimizer step budget";
    max_epochs: Option<usize> = None, "train.max_epochs", "epoch budget (none: unlimited)";
    eval_every: usize = 100, "train.eval_every", "steps between evaluations";
    eval_batch: usize = 500, "train.eval_batch", "evaluation batch size";
    threshold: ThresholdSetting = ThresholdSetting::Auto, "train.threshold", "early stop: auto | none | metric:<x> | loss:<x>";

    copy_t: usize = 30, "copy.T", "blank stretch length";
    copy_train: usize = 20_000, "copy.n_train", "training samples";
    copy_test: usize = 2_000, "copy.n_test", "test samples";

    addition_t: usize = 200, "addition.T", "sequence length";
    addition_train: usize = 22_500, "addition.n_train", "training samples";
    addition_test: usize = 2_500, "addition.n_test", "test samples";

    mnist_dir: PathBuf = PathBuf::from("data/mnist"), "mnist.dir", "directory holding the IDX files";
    mnist_images: String = "train-images-idx3-ubyte".into(), "mnist.images", "image file name";
    mnist_labels: String = "train-labels-idx1-ubyte".into(), "mnist.labels", "label file name";
    mnist_train: usize = 2_000, "mnist.n_train", "leading samples used for training";
    mnist_test: usize = 1_000, "mnist.n_test", "following samples used for evaluation";
    perm_seed: Option<u64> = None, "mnist.perm_seed", "pixel permutation seed for pmnist (none: root seed)";

    corpus: PathBuf = PathBuf::from("data/corpus.txt"), "charlm.path", "plain-text corpus";
    char_len: usize = 64, "charlm.L", "window length";
    valid_fraction: f64 = 0.1, "charlm.valid_fraction", "trailing fraction held out";

    bench_runs: usize = 10, "bench.runs", "independent runs per benchmark";

    gc_batch: usize = 2, "gradcheck.batch", "samples in the checked batch";
    gc_step: f64 = 1e-5, "gradcheck.step", "central-difference step";
    gc_tolerance: f64 = 1e-4, "gradcheck.tolerance", "maximum relative error";
    gc_probes: Option<usize> = None, "gradcheck.probes", "entries probed per tensor (none: all)";
    gc_fault: Option<String> = None, "gradcheck.fault", "debug: op whose backward rule is corrupted";
    gc_fault_factor: f64 = 2.0, "gradcheck.fault_factor", "debug: factor applied by the corrupted rule";

    out: Option<PathBuf> = None, "paths.out", "output directory (none: runs/<task>)";
}

impl RunConfig {
    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), HarnessError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                HarnessError::Config(m) => HarnessError::Config(format!("{origin}:{}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_text(text, "config")?;
        Ok(cfg)
    }

    /// The fully resolved configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, _) in KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.get(key).unwrap_or_default());
            s.push('\n');
        }
        s
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(self.task.render()))
    }

    pub fn uses_seq(&self) -> bool {
        match self.model_kind {
            ModelKind::Auto => self.task == Task::Charlm,
            ModelKind::Base => false,
            ModelKind::Seq => true,
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(4 * self.width)
    }
}

/// Command-line spelling of a key: `train.max_steps` becomes `train-max-steps`.
pub fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

/// Short spellings: the part after the section, when no other key shares it.
pub fn flag_alias(key: &str) -> Option<String> {
    let (_, tail) = key.split_once('.')?;
    let clashes = KEYS
        .iter()
        .filter(|(k, _)| k.split_once('.').map_or(*k, |(_, t)| t) == tail)
        .count();
    (clashes == 1).then(|| flag_name(tail))
}
