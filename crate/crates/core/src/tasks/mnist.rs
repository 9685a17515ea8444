//! Sequential and permuted MNIST from IDX files.
//!
//! Each image is flattened row by row into a single-channel sequence of
//! `rows * cols` pixels. The permuted variant reorders every sequence with one
//! fixed permutation shared by all samples.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{Dataset, Inputs, Targets};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

pub const MNIST_CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file: returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected 0x00000803/0x00000801"
        )));
    }
    let count = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format(format!(
            "images: truncated, header promises {need} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok((count, rows, cols, body[..need].to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {magic:#010x}, expected 0x00000803/0x00000801"
        )));
    }
    let count = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format(format!(
            "labels: truncated, header promises {count} labels, found {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mnist {
    pub rows: usize,
    pub cols: usize,
    /// `n x rows * cols` pixel bytes, in sequence order.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    /// Present when the sequences were permuted: `seq[i] = original[perm[i]]`.
    pub permutation: Option<Vec<u32>>,
}

impl Mnist {
    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self> {
        let (count, rows, cols, pixels) = parse_idx_images(images)?;
        let labels = parse_idx_labels(labels)?;
        if labels.len() != count {
            return Err(Error::Format(format!(
                "{count} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= MNIST_CLASSES) {
            return Err(Error::Format(format!("label {bad} outside 0..10")));
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            labels,
            permutation: None,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.seq_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            permutation: self.permutation.clone(),
        }
    }

    /// Reorders every sequence by `perm`. Permutations compose with any already applied.
    pub fn permuted(&self, perm: &[u32]) -> Result<Self> {
        let l = self.seq_len();
        check_permutation(perm, l)?;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for img in self.pixels.chunks(l) {
            pixels.extend(perm.iter().map(|&p| img[p as usize]));
        }
        let permutation = match &self.permutation {
            Some(prev) => perm.iter().map(|&p| prev[p as usize]).collect(),
            None => perm.to_vec(),
        };
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels: self.labels.clone(),
            permutation: Some(permutation),
        })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(
            Inputs::Pixels {
                data: self.pixels.clone(),
                len: self.seq_len(),
            },
            Targets::Classes {
                data: self.labels.iter().map(|&l| l as u16).collect(),
                per_sample: 1,
                classes: MNIST_CLASSES,
            },
        )
    }
}

fn check_permutation(perm: &[u32], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Data(format!("permutation of length {} for sequences of {n}", perm.len())));
    }
    let mut seen = alloc::vec![false; n];
    for &p in perm {
        let p = p as usize;
        if p >= n || seen[p] {
            return Err(Error::Data(format!("not a permutation: entry {p}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// A uniformly random permutation of `0..n` drawn from `seed`.
pub fn permutation_from_seed(n: usize, seed: u64) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(&mut substream(seed, Stream::Permutation, 0));
    perm
}

pub fn invert_permutation(perm: &[u32]) -> Vec<u32> {
    let mut inv = alloc::vec![0u32; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p as usize] = i as u32;
    }
    inv
}

/// Applies the permutation drawn from `seed` to every sample.
pub fn apply_permutation(data: &Mnist, seed: u64) -> Result<Mnist> {
    data.permuted(&permutation_from_seed(data.seq_len(), seed))
}
