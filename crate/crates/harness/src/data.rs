//! Task loading and model construction from a [`RunConfig`].

use std::path::Path;

use igloo_core::model::{BaseConfig, BasePlacement, EncoderConfig, HeadConfig, ModelConfig, SeqConfig, SeqPlacement};
use igloo_core::optim::AdamConfig;
use igloo_core::tasks::{
    addition_split, apply_permutation, copy_memory_split, CharCorpus, Dataset, Mnist, Vocab, COPY_CLASSES,
    COPY_RECALL, MNIST_CLASSES,
};
use igloo_core::trainer::{Threshold, TrainConfig};

use crate::config::{PlacementSetting, RunConfig, Task, ThresholdSetting};
use crate::{HarnessError, Result};

/// Loaded train and evaluation sets plus what the model needs to know about them.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Dataset,
    pub eval: Dataset,
    pub head: HeadConfig,
    /// Set for the char-LM task.
    pub vocab: Option<Vocab>,
    /// Set for permuted MNIST.
    pub permutation: Option<Vec<u32>>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

/// The MNIST directory. `IGLOO_MNIST_DIR` replaces the default location but not
/// an explicitly configured one.
pub fn mnist_dir(cfg: &RunConfig) -> std::path::PathBuf {
    match std::env::var_os("IGLOO_MNIST_DIR") {
        Some(d) if cfg.mnist_dir == RunConfig::default().mnist_dir => d.into(),
        _ => cfg.mnist_dir.clone(),
    }
}

pub fn load_mnist(cfg: &RunConfig) -> Result<Mnist> {
    let dir = mnist_dir(cfg);
    let images = read(&dir.join(&cfg.mnist_images))?;
    let labels = read(&dir.join(&cfg.mnist_labels))?;
    let mut mnist = Mnist::from_idx(&images, &labels)?;
    let need = cfg.mnist_train + cfg.mnist_test;
    if mnist.len() < need {
        return Err(HarnessError::Config(format!(
            "mnist.n_train + mnist.n_test = {need} but {} holds only {} samples",
            dir.display(),
            mnist.len()
        )));
    }
    mnist = mnist.head(need);
    if cfg.task == Task::Pmnist {
        mnist = apply_permutation(&mnist, cfg.perm_seed.unwrap_or(cfg.seed))?;
    }
    Ok(mnist)
}

pub fn load_corpus(cfg: &RunConfig) -> Result<CharCorpus> {
    let text = std::fs::read_to_string(&cfg.corpus).map_err(|e| HarnessError::io(&cfg.corpus, e))?;
    Ok(CharCorpus::from_text(&text, cfg.char_len, cfg.valid_fraction)?)
}

pub fn load_task(cfg: &RunConfig) -> Result<TaskData> {
    let data = match cfg.task {
        Task::Copy => {
            let (train, test) = copy_memory_split(cfg.copy_t, cfg.copy_train, cfg.copy_test, cfg.seed)?;
            TaskData {
                head: HeadConfig::Classify {
                    groups: COPY_RECALL,
                    classes: COPY_CLASSES,
                },
                train: train.dataset()?,
                eval: test.dataset()?,
                vocab: None,
                permutation: None,
            }
        }
        Task::Addition => {
            let (train, test) = addition_split(cfg.addition_t, cfg.addition_train, cfg.addition_test, cfg.seed)?;
            TaskData {
                head: HeadConfig::Regress { outputs: 1 },
                train: train.dataset()?,
                eval: test.dataset()?,
                vocab: None,
                permutation: None,
            }
        }
        Task::Mnist | Task::Pmnist => {
            let mnist = load_mnist(cfg)?;
            let all = mnist.dataset()?;
            let eval: Vec<usize> = (cfg.mnist_train..cfg.mnist_train + cfg.mnist_test).collect();
            TaskData {
                head: HeadConfig::Classify {
                    groups: 1,
                    classes: MNIST_CLASSES,
                },
                train: all.head(cfg.mnist_train)?,
                eval: all.select(&eval)?,
                vocab: None,
                permutation: mnist.permutation.clone(),
            }
        }
        Task::Charlm => {
            let corpus = load_corpus(cfg)?;
            let v = corpus.vocab.len();
            TaskData {
                head: HeadConfig::PerStep { classes: v },
                train: corpus.train_dataset()?,
                eval: corpus.valid_dataset()?,
                vocab: Some(corpus.vocab),
                permutation: None,
            }
        }
    };
    if data.train.is_empty() || data.eval.is_empty() {
        return Err(HarnessError::Config(format!(
            "task {} produced {} training and {} evaluation samples",
            cfg.task,
            data.train.len(),
            data.eval.len()
        )));
    }
    Ok(data)
}

pub fn model_config(cfg: &RunConfig, data: &TaskData) -> Result<ModelConfig> {
    let encoder = if cfg.uses_seq() {
        let placement = match cfg.placement {
            PlacementSetting::Auto | PlacementSetting::Gaussian => SeqPlacement::Gaussian { sigma: cfg.sigma },
            PlacementSetting::Uniform => SeqPlacement::Uniform,
            PlacementSetting::Deterministic => SeqPlacement::Deterministic,
            PlacementSetting::Random => {
                return Err(HarnessError::Config(
                    "model.placement = random applies to IGLOO-base; IGLOO-seq takes gaussian, uniform or deterministic".into(),
                ))
            }
        };
        EncoderConfig::Seq(SeqConfig {
            patches: cfg.patches,
            patch_size: cfg.patch_size,
            filters: cfg.filters,
            kernel_width: cfg.kernel_width,
            width: cfg.width,
            stacks: cfg.stacks,
            blocks: cfg.blocks,
            depth: cfg.depth,
            memory: cfg.memory,
            placement,
            ffn_hidden: cfg.ffn_width(),
        })
    } else {
        if matches!(data.head, HeadConfig::PerStep { .. }) {
            return Err(HarnessError::Config(format!(
                "task {} predicts every step and needs model.kind = seq",
                cfg.task
            )));
        }
        let placement = match cfg.placement {
            PlacementSetting::Auto | PlacementSetting::Random => BasePlacement::Random,
            PlacementSetting::Deterministic => BasePlacement::Deterministic,
            other => {
                return Err(HarnessError::Config(format!(
                    "model.placement = {other:?} applies to IGLOO-seq; IGLOO-base takes random or deterministic"
                )))
            }
        };
        EncoderConfig::Base(BaseConfig {
            patches: cfg.patches,
            patch_size: cfg.patch_size,
            filters: cfg.filters,
            kernel_width: cfg.kernel_width,
            stacks: cfg.stacks,
            activation: cfg.activation,
            placement,
        })
    };
    Ok(ModelConfig {
        seq_len: data.train.seq_len(),
        input_dim: data.train.input_dim(),
        encoder,
        head: data.head,
        dropout: cfg.dropout,
    })
}

pub fn threshold(cfg: &RunConfig) -> Option<Threshold> {
    match cfg.threshold {
        ThresholdSetting::Auto => match cfg.task {
            Task::Copy => Some(Threshold::Metric(0.99)),
            Task::Addition => Some(Threshold::Metric(0.01)),
            _ => None,
        },
        ThresholdSetting::Off => None,
        ThresholdSetting::Metric(v) => Some(Threshold::Metric(v)),
        ThresholdSetting::Loss(v) => Some(Threshold::Loss(v)),
    }
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        },
        clip_norm: cfg.clip_norm,
        batch_size: cfg.batch_size,
        max_steps: cfg.max_steps,
        max_epochs: cfg.max_epochs,
        eval_every: cfg.eval_every,
        eval_batch: cfg.eval_batch,
        seed: cfg.seed,
        threshold: threshold(cfg),
    }
}
