//! The addition problem: regress the sum of the two marked numbers.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use super::{Dataset, Inputs, Targets};
use crate::rng::{substream, Stream};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdditionTask {
    pub seq_len: usize,
    /// `n x T x 2`: channel 0 is the number, channel 1 the marker.
    pub inputs: Vec<Real>,
    pub targets: Vec<Real>,
}

impl AdditionTask {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(
            Inputs::Dense {
                data: self.inputs.clone(),
                len: self.seq_len,
                channels: 2,
            },
            Targets::Values {
                data: self.targets.clone(),
                per_sample: 1,
            },
        )
    }
}

/// `n` samples of length `T` drawn from `seed`. Numbers are uniform on `[0, 1)`;
/// the two marker positions are distinct and uniform.
pub fn gen_addition(seq_len: usize, n: usize, seed: u64) -> Result<AdditionTask> {
    generate(seq_len, n, seed, Stream::TrainData)
}

/// Train and test sets from separate substreams of `seed`.
pub fn addition_split(
    seq_len: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(AdditionTask, AdditionTask)> {
    Ok((
        generate(seq_len, n_train, seed, Stream::TrainData)?,
        generate(seq_len, n_test, seed, Stream::EvalData)?,
    ))
}

fn generate(seq_len: usize, n: usize, seed: u64, stream: Stream) -> Result<AdditionTask> {
    if seq_len < 2 {
        return Err(Error::Config(alloc::format!("addition needs T >= 2, got {seq_len}")));
    }
    let mut rng = substream(seed, stream, 0);
    let mut inputs = Vec::with_capacity(n * seq_len * 2);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let base = inputs.len();
        for _ in 0..seq_len {
            inputs.push(rng.random::<f64>() as Real);
            inputs.push(0.0);
        }
        let marks = index::sample(&mut rng, seq_len, 2);
        let mut sum = 0.0;
        for m in marks.iter() {
            inputs[base + 2 * m + 1] = 1.0;
            sum += inputs[base + 2 * m];
        }
        targets.push(sum);
    }
    Ok(AdditionTask {
        seq_len,
        inputs,
        targets,
    })
}
