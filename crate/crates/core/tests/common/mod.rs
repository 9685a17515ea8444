//! Reference implementations written as plain nested loops, independent of the
//! library's kernels.
#![allow(dead_code)]

use igloo_core::plan::{PatchPlan, SeqPatchPlan};
use igloo_core::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// `out[t][k] = b[k] + sum x_pad[t + i][m] * w[i][m][k]` with `w - 1` explicit zero rows.
pub fn conv(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Vec<Vec<Real>> {
    let (l, m) = (x.dims()[0], x.dims()[1]);
    let (w, k) = (kernel.dims()[0], kernel.dims()[2]);
    let mut padded = vec![vec![0.0; m]; l + w - 1];
    for t in 0..l {
        for c in 0..m {
            padded[t + w - 1][c] = x.at(&[t, c]);
        }
    }
    let mut out = vec![vec![0.0; k]; l];
    for t in 0..l {
        for kk in 0..k {
            let mut acc = bias.data()[kk];
            for i in 0..w {
                for c in 0..m {
                    acc += padded[t + i][c] * kernel.at(&[i, c, kk]);
                }
            }
            out[t][kk] = acc;
        }
    }
    out
}

pub fn to_tensor(rows: &[Vec<Real>]) -> Tensor {
    let dims = [rows.len(), rows[0].len()];
    Tensor::new(&dims, rows.concat()).unwrap()
}

/// One patch: explicit gather into a `p x K` block, then a double loop.
pub fn patch_logit(f: &[Vec<Real>], locs: &[u32], filter: &Tensor, j: usize) -> Real {
    let gathered: Vec<&Vec<Real>> = locs.iter().map(|&i| &f[i as usize]).collect();
    let mut acc = 0.0;
    for (i, row) in gathered.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            acc += v * filter.at(&[i, c, j]);
        }
    }
    acc
}

pub fn base(f: &[Vec<Real>], plan: &PatchPlan, filter: &Tensor, bias: &Tensor, relu: bool) -> Vec<Real> {
    (0..plan.patches())
        .map(|j| {
            let u = patch_logit(f, plan.patch(j), filter, j) + bias.data()[j];
            if relu { u.max(0.0) } else { u }
        })
        .collect()
}

/// Per-step logits `U*[t][j]`.
pub fn seq_logits(f: &[Vec<Real>], plan: &SeqPatchPlan, filter: &Tensor, bias: &Tensor) -> Vec<Vec<Real>> {
    let p = plan.patch_size();
    (0..plan.seq_len())
        .map(|t| {
            let step = plan.step(t);
            (0..plan.patches())
                .map(|j| patch_logit(f, &step[j * p..(j + 1) * p], filter, j) + bias.data()[j])
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[Real]) -> Vec<Real> {
    let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let e: Vec<Real> = row.iter().map(|v| (v - m).exp()).collect();
    let s: Real = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `out[t][z] = sum_j A[t][j] * V[t][j][z]` with `V[t][j][z] = (F W)[t][z] * B[j][z]`
/// (per-patch bank `[1, J, Z]`).
pub fn seq_attention(f: &[Vec<Real>], logits: &[Vec<Real>], w: &Tensor, bank: &Tensor) -> Vec<Vec<Real>> {
    let (k, z) = (w.dims()[0], w.dims()[1]);
    let j = bank.dims()[1];
    f.iter()
        .zip(logits)
        .map(|(frow, lrow)| {
            let a = softmax(lrow);
            let fw: Vec<Real> = (0..z).map(|zz| (0..k).map(|kk| frow[kk] * w.at(&[kk, zz])).sum()).collect();
            (0..z)
                .map(|zz| (0..j).map(|jj| a[jj] * fw[zz] * bank.at(&[0, jj, zz])).sum())
                .collect()
        })
        .collect()
}

pub fn matmul_rows(x: &[Vec<Real>], w: &Tensor) -> Vec<Vec<Real>> {
    let (n, q) = (w.dims()[0], w.dims()[1]);
    x.iter()
        .map(|row| (0..q).map(|c| (0..n).map(|i| row[i] * w.at(&[i, c])).sum()).collect())
        .collect()
}

pub fn max_diff(a: &[Vec<Real>], b: &Tensor) -> Real {
    let flat: Vec<Real> = a.concat();
    assert_eq!(flat.len(), b.numel());
    flat.iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, Real::max)
}
