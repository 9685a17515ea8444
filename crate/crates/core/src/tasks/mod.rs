//! Benchmark tasks and the in-memory dataset type the trainer consumes.
//!
//! Generators are pure functions of their arguments and seed. Samples are stored
//! compactly (symbols and pixels as bytes) and expanded to real tensors only when
//! a [`Batch`] is assembled.

mod addition;
mod charlm;
mod copy;
mod mnist;

use alloc::format;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Real, Result};

pub use addition::{addition_split, gen_addition, AdditionTask};
pub use charlm::{CharCorpus, Vocab};
pub use copy::{copy_memory_split, gen_copy_memory, CopyMemory, COPY_CLASSES, COPY_RECALL, COPY_SYMBOLS};
pub use mnist::{
    apply_permutation, invert_permutation, parse_idx_images, parse_idx_labels, permutation_from_seed,
    Mnist, MNIST_CLASSES,
};

/// Per-sample inputs, each a sequence of length `len`.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// Integer symbols, one-hot encoded over `vocab` channels.
    Symbols { data: Vec<u8>, len: usize, vocab: usize },
    /// Byte intensities scaled by 1/255 into a single channel.
    Pixels { data: Vec<u8>, len: usize },
    /// Real features with `channels` per step.
    Dense { data: Vec<Real>, len: usize, channels: usize },
}

/// Per-sample targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `per_sample` class labels per sample, each `< classes`.
    Classes { data: Vec<u16>, per_sample: usize, classes: usize },
    /// `per_sample` real values per sample.
    Values { data: Vec<Real>, per_sample: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Inputs,
    targets: Targets,
    len: usize,
}

/// Targets of a batch, flattened row-major over `(sample, slot)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    /// `[B, per_sample]`.
    Values(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, L, M]`.
    pub inputs: Tensor,
    pub targets: BatchTargets,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.inputs.dims()[0]
    }
}

impl Dataset {
    pub fn new(inputs: Inputs, targets: Targets) -> Result<Self> {
        let n_in = match &inputs {
            Inputs::Symbols { data, len, vocab } => {
                if let Some(&bad) = data.iter().find(|&&s| s as usize >= *vocab) {
                    return Err(Error::Data(format!("symbol {bad} outside vocabulary of {vocab}")));
                }
                per(data.len(), *len)?
            }
            Inputs::Pixels { data, len } => per(data.len(), *len)?,
            Inputs::Dense { data, len, channels } => per(data.len(), len * channels)?,
        };
        let n_out = match &targets {
            Targets::Classes { data, per_sample, classes } => {
                if let Some(&bad) = data.iter().find(|&&c| c as usize >= *classes) {
                    return Err(Error::Data(format!("class {bad} outside [0, {classes})")));
                }
                per(data.len(), *per_sample)?
            }
            Targets::Values { data, per_sample } => per(data.len(), *per_sample)?,
        };
        if n_in != n_out {
            return Err(Error::Data(format!("{n_in} input samples but {n_out} target samples")));
        }
        if n_in == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        Ok(Self {
            inputs,
            targets,
            len: n_in,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn seq_len(&self) -> usize {
        match self.inputs {
            Inputs::Symbols { len, .. } | Inputs::Pixels { len, .. } | Inputs::Dense { len, .. } => len,
        }
    }

    /// Channels per step after encoding.
    pub fn input_dim(&self) -> usize {
        match self.inputs {
            Inputs::Symbols { vocab, .. } => vocab,
            Inputs::Pixels { .. } => 1,
            Inputs::Dense { channels, .. } => channels,
        }
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len)).collect();
        self.select(&idx)
    }

    /// A new dataset made of the given samples, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len) {
            return Err(Error::Index { index: bad, bound: self.len });
        }
        fn pick<T: Copy>(data: &[T], width: usize, indices: &[usize]) -> Vec<T> {
            let mut out = Vec::with_capacity(indices.len() * width);
            for &i in indices {
                out.extend_from_slice(&data[i * width..(i + 1) * width]);
            }
            out
        }
        let inputs = match &self.inputs {
            Inputs::Symbols { data, len, vocab } => Inputs::Symbols {
                data: pick(data, *len, indices),
                len: *len,
                vocab: *vocab,
            },
            Inputs::Pixels { data, len } => Inputs::Pixels {
                data: pick(data, *len, indices),
                len: *len,
            },
            Inputs::Dense { data, len, channels } => Inputs::Dense {
                data: pick(data, len * channels, indices),
                len: *len,
                channels: *channels,
            },
        };
        let targets = match &self.targets {
            Targets::Classes { data, per_sample, classes } => Targets::Classes {
                data: pick(data, *per_sample, indices),
                per_sample: *per_sample,
                classes: *classes,
            },
            Targets::Values { data, per_sample } => Targets::Values {
                data: pick(data, *per_sample, indices),
                per_sample: *per_sample,
            },
        };
        Dataset::new(inputs, targets)
    }

    /// Assembles the given samples into tensors.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len) {
            return Err(Error::Index { index: bad, bound: self.len });
        }
        let b = indices.len();
        let (l, m) = (self.seq_len(), self.input_dim());
        let mut x = alloc::vec![0.0; b * l * m];
        match &self.inputs {
            Inputs::Symbols { data, len, vocab } => {
                for (s, &i) in indices.iter().enumerate() {
                    for (t, &sym) in data[i * len..(i + 1) * len].iter().enumerate() {
                        x[(s * len + t) * vocab + sym as usize] = 1.0;
                    }
                }
            }
            Inputs::Pixels { data, len } => {
                for (s, &i) in indices.iter().enumerate() {
                    for (o, &px) in x[s * len..(s + 1) * len].iter_mut().zip(&data[i * len..(i + 1) * len]) {
                        *o = px as Real / 255.0;
                    }
                }
            }
            Inputs::Dense { data, len, channels } => {
                let w = len * channels;
                for (s, &i) in indices.iter().enumerate() {
                    x[s * w..(s + 1) * w].copy_from_slice(&data[i * w..(i + 1) * w]);
                }
            }
        }
        let targets = match &self.targets {
            Targets::Classes { data, per_sample, .. } => BatchTargets::Classes(
                indices
                    .iter()
                    .flat_map(|&i| data[i * per_sample..(i + 1) * per_sample].iter().map(|&c| c as usize))
                    .collect(),
            ),
            Targets::Values { data, per_sample } => {
                let mut v = Vec::with_capacity(b * per_sample);
                for &i in indices {
                    v.extend_from_slice(&data[i * per_sample..(i + 1) * per_sample]);
                }
                BatchTargets::Values(Tensor::new(&[b, *per_sample], v)?)
            }
        };
        Ok(Batch {
            inputs: Tensor::new(&[b, l, m], x)?,
            targets,
        })
    }
}

fn per(total: usize, width: usize) -> Result<usize> {
    if width == 0 || !total.is_multiple_of(width) {
        return Err(Error::Data(format!("{total} values do not split into samples of {width}")));
    }
    Ok(total / width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn symbols_are_one_hot_encoded() {
        let ds = Dataset::new(
            Inputs::Symbols { data: vec![0, 2, 1, 1], len: 2, vocab: 3 },
            Targets::Classes { data: vec![1, 0], per_sample: 1, classes: 2 },
        )
        .unwrap();
        let b = ds.batch(&[1, 0]).unwrap();
        assert_eq!(b.inputs.dims(), &[2, 2, 3]);
        assert_eq!(b.inputs.data(), &[0., 1., 0., 0., 1., 0., 1., 0., 0., 0., 0., 1.]);
        assert_eq!(b.targets, BatchTargets::Classes(vec![0, 1]));
    }

    #[test]
    fn pixels_are_scaled() {
        let ds = Dataset::new(
            Inputs::Pixels { data: vec![0, 255], len: 2 },
            Targets::Classes { data: vec![3], per_sample: 1, classes: 10 },
        )
        .unwrap();
        assert_eq!(ds.batch(&[0]).unwrap().inputs.data(), &[0.0, 1.0]);
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let err = Dataset::new(
            Inputs::Pixels { data: vec![0, 255], len: 1 },
            Targets::Classes { data: vec![3], per_sample: 1, classes: 10 },
        );
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
