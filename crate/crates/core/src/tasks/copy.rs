//! Copy-memory: recall ten symbols after a long blank stretch.
//!
//! A sample of length `T + 20` holds ten symbols in `1..=8`, then `T - 1` blanks,
//! the marker `9`, and ten more blanks during which the model must reproduce the
//! ten symbols. Only those ten recall positions are scored, as classes `0..8`.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;

use super::{Dataset, Inputs, Targets};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Input alphabet size (symbols `0..=9`).
pub const COPY_SYMBOLS: usize = 10;
/// Output classes (symbols `1..=8` shifted down by one).
pub const COPY_CLASSES: usize = 8;
/// Symbols to memorise and recall.
pub const COPY_RECALL: usize = 10;

const MARKER: u8 = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct CopyMemory {
    pub blank: usize,
    /// `n x (T + 20)` symbols.
    pub inputs: Vec<u8>,
    /// `n x 10` classes.
    pub targets: Vec<u8>,
}

impl CopyMemory {
    pub fn seq_len(&self) -> usize {
        self.blank + 2 * COPY_RECALL
    }

    pub fn len(&self) -> usize {
        self.targets.len() / COPY_RECALL
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[u8] {
        let l = self.seq_len();
        &self.inputs[i * l..(i + 1) * l]
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(
            Inputs::Symbols {
                data: self.inputs.clone(),
                len: self.seq_len(),
                vocab: COPY_SYMBOLS,
            },
            Targets::Classes {
                data: self.targets.iter().map(|&c| c as u16).collect(),
                per_sample: COPY_RECALL,
                classes: COPY_CLASSES,
            },
        )
    }
}

fn sample_into(blank: usize, rng: &mut impl Rng, inputs: &mut Vec<u8>, targets: &mut Vec<u8>) {
    let l = blank + 2 * COPY_RECALL;
    let start = inputs.len();
    inputs.resize(start + l, 0);
    for i in 0..COPY_RECALL {
        let s: u8 = rng.random_range(1..=8);
        inputs[start + i] = s;
        targets.push(s - 1);
    }
    inputs[start + blank + COPY_RECALL - 1] = MARKER;
}

/// `n` samples with blank length `T`, drawn from `seed`.
pub fn gen_copy_memory(blank: usize, n: usize, seed: u64) -> Result<CopyMemory> {
    if blank == 0 {
        return Err(Error::Config("copy-memory needs T >= 1".into()));
    }
    let mut rng = substream(seed, Stream::TrainData, 0);
    let mut inputs = Vec::with_capacity(n * (blank + 2 * COPY_RECALL));
    let mut targets = Vec::with_capacity(n * COPY_RECALL);
    for _ in 0..n {
        sample_into(blank, &mut rng, &mut inputs, &mut targets);
    }
    Ok(CopyMemory {
        blank,
        inputs,
        targets,
    })
}

/// Train and test sets from separate substreams of `seed`. Test samples whose
/// symbol sequence also occurs in training are redrawn, so the sets are disjoint.
pub fn copy_memory_split(
    blank: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(CopyMemory, CopyMemory)> {
    let train = gen_copy_memory(blank, n_train, seed)?;
    let seen: BTreeSet<&[u8]> = train.targets.chunks(COPY_RECALL).collect();
    let mut rng = substream(seed, Stream::EvalData, 0);
    let mut inputs = Vec::with_capacity(n_test * train.seq_len());
    let mut targets = Vec::with_capacity(n_test * COPY_RECALL);
    while targets.len() < n_test * COPY_RECALL {
        let (i0, t0) = (inputs.len(), targets.len());
        sample_into(blank, &mut rng, &mut inputs, &mut targets);
        if seen.contains(&targets[t0..]) {
            inputs.truncate(i0);
            targets.truncate(t0);
        }
    }
    let test = CopyMemory {
        blank,
        inputs,
        targets,
    };
    Ok((train, test))
}
