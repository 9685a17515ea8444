//! Time-axis kernels: gathering, causal convolution and the fused IGLOO patch
//! reductions, each with its gradient.
//!
//! Every kernel accepts an unbatched `[L, C]` or a batched `[B, L, C]` input.

use alloc::vec;
use alloc::vec::Vec;

use super::{finish, Tensor};
use crate::plan::{PatchPlan, SeqPatchPlan};
use crate::{Error, Real, Result};

/// Splits `[L, C]` / `[B, L, C]` into `(B, L, C)`.
fn seq_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [l, c] => Ok((1, l, c)),
        [b, l, c] => Ok((b, l, c)),
        _ => Err(Error::invalid(op, alloc::format!("expected [L, C] or [B, L, C], got {}", t.shape()))),
    }
}

fn with_batch(batched: bool, b: usize, rest: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(rest.len() + 1);
    if batched {
        dims.push(b);
    }
    dims.extend_from_slice(rest);
    dims
}

/// Rows `indices` of the time axis: `[L, K] -> [p, K]` (or batched). Duplicates allowed.
pub fn gather_time(f: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (b, l, k) = seq_dims("gather_time", f)?;
    if indices.is_empty() {
        return Err(Error::invalid("gather_time", "no indices"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= l) {
        return Err(Error::Index { index: bad, bound: l });
    }
    let mut data = Vec::with_capacity(b * indices.len() * k);
    for s in 0..b {
        for &i in indices {
            let row = (s * l + i) * k;
            data.extend_from_slice(&f.data()[row..row + k]);
        }
    }
    let dims = with_batch(f.rank() == 3, b, &[indices.len(), k]);
    Ok(Tensor::from_parts(dims, data))
}

/// Adjoint of [`gather_time`]: scatter-adds rows of `g` into a zero `[.., L, K]` tensor.
pub fn scatter_time_add(g: &Tensor, indices: &[usize], seq_len: usize) -> Result<Tensor> {
    let (b, p, k) = seq_dims("scatter_time_add", g)?;
    if p != indices.len() {
        return Err(Error::invalid("scatter_time_add", "index count does not match gradient"));
    }
    let mut data = vec![0.0; b * seq_len * k];
    for s in 0..b {
        for (r, &i) in indices.iter().enumerate() {
            let src = &g.data()[(s * p + r) * k..(s * p + r + 1) * k];
            let dst = &mut data[(s * seq_len + i) * k..(s * seq_len + i + 1) * k];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    Ok(Tensor::from_parts(with_batch(g.rank() == 3, b, &[seq_len, k]), data))
}

fn conv_dims(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, l, m) = seq_dims("causal_conv1d", x)?;
    let (w, km, k) = match *kernel.dims() {
        [w, km, k] => (w, km, k),
        _ => return Err(Error::shape("causal_conv1d", x.shape(), kernel.shape())),
    };
    if km != m {
        return Err(Error::shape("causal_conv1d", x.shape(), kernel.shape()));
    }
    if bias.dims() != [k] {
        return Err(Error::shape("causal_conv1d", kernel.shape(), bias.shape()));
    }
    Ok((b, l, m, w, k))
}

/// Causal 1-D convolution with `w - 1` zero rows padded on the left:
/// `out[t, k] = bias[k] + sum_{i<w, m} x[t - w + 1 + i, m] * kernel[i, m, k]`.
pub fn causal_conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, l, m, w, k) = conv_dims(x, kernel, bias)?;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; b * l * k];
    for s in 0..b {
        for t in 0..l {
            let o = &mut out[(s * l + t) * k..(s * l + t + 1) * k];
            o.copy_from_slice(bias.data());
            for i in 0..w {
                // input row feeding tap i at output step t
                let Some(src) = (t + i).checked_sub(w - 1) else {
                    continue;
                };
                let xrow = &xd[(s * l + src) * m..(s * l + src + 1) * m];
                for (mi, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kd[(i * m + mi) * k..(i * m + mi + 1) * k];
                    for (ov, &kv) in o.iter_mut().zip(krow) {
                        *ov += xv * kv;
                    }
                }
            }
        }
    }
    finish("causal_conv1d", Tensor::from_parts(with_batch(x.rank() == 3, b, &[l, k]), out))
}

/// Gradients of [`causal_conv1d`] with respect to input, kernel and bias.
pub fn causal_conv1d_backward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, l, m, w, k) = conv_dims(x, kernel, bias)?;
    let (xd, kd, gd) = (x.data(), kernel.data(), g.data());
    let mut gx = vec![0.0; x.numel()];
    let mut gk = vec![0.0; kernel.numel()];
    let mut gb = vec![0.0; k];
    for s in 0..b {
        for t in 0..l {
            let grow = &gd[(s * l + t) * k..(s * l + t + 1) * k];
            for (acc, &gv) in gb.iter_mut().zip(grow) {
                *acc += gv;
            }
            for i in 0..w {
                let Some(src) = (t + i).checked_sub(w - 1) else {
                    continue;
                };
                for mi in 0..m {
                    let xv = xd[(s * l + src) * m + mi];
                    let off = (i * m + mi) * k;
                    let krow = &kd[off..off + k];
                    gx[(s * l + src) * m + mi] += krow.iter().zip(grow).map(|(a, c)| a * c).sum::<Real>();
                    if xv != 0.0 {
                        for (acc, &gv) in gk[off..off + k].iter_mut().zip(grow) {
                            *acc += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.dims().to_vec(), gx),
        Tensor::from_parts(kernel.dims().to_vec(), gk),
        Tensor::from_parts(vec![k], gb),
    ))
}

fn check_filter(
    op: &'static str,
    seq_len: usize,
    k: usize,
    plan_len: usize,
    patches: usize,
    patch_size: usize,
    filter: &Tensor,
    bias: &Tensor,
) -> Result<()> {
    if plan_len != seq_len {
        return Err(Error::Config(alloc::format!(
            "{op}: plan built for L={plan_len}, feature map has L={seq_len}"
        )));
    }
    if filter.dims() != [patch_size, k, patches] {
        return Err(Error::Config(alloc::format!(
            "{op}: filter shape {} does not match p={patch_size}, K={k}, J={patches}",
            filter.shape()
        )));
    }
    if bias.dims() != [patches] {
        return Err(Error::Config(alloc::format!(
            "{op}: bias shape {} does not match J={patches}",
            bias.shape()
        )));
    }
    Ok(())
}

/// `[p, K, J]` filter rearranged to `[J, p, K]` so each patch reads contiguously.
fn filter_by_patch(filter: &Tensor, p: usize, k: usize, j: usize) -> Vec<Real> {
    let mut out = vec![0.0; p * k * j];
    for (idx, &v) in filter.data().iter().enumerate() {
        let jj = idx % j;
        let ic = idx / j;
        out[jj * p * k + ic] = v;
    }
    out
}

fn filter_from_patch(by_patch: &[Real], p: usize, k: usize, j: usize) -> Vec<Real> {
    let mut out = vec![0.0; p * k * j];
    for (idx, o) in out.iter_mut().enumerate() {
        *o = by_patch[(idx % j) * p * k + idx / j];
    }
    out
}

fn patch_dot(f_rows: &[Real], k: usize, locs: &[u32], w: &[Real]) -> Real {
    let mut acc = 0.0;
    for (slot, &loc) in locs.iter().enumerate() {
        let row = &f_rows[loc as usize * k..(loc as usize + 1) * k];
        let wrow = &w[slot * k..(slot + 1) * k];
        acc += row.iter().zip(wrow).map(|(a, b)| a * b).sum::<Real>();
    }
    acc
}

/// One IGLOO reduction over a fixed set of patches:
/// `U[j] = bias[j] + sum_{i<p, c<K} F[loc[j, i], c] * filter[i, c, j]`.
/// Output is `[J]`, or `[B, J]` for a batched feature map. No activation.
pub fn patch_reduce(f: &Tensor, plan: &PatchPlan, filter: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, l, k) = seq_dims("patch_reduce", f)?;
    let (j, p) = (plan.patches(), plan.patch_size());
    check_filter("patch_reduce", l, k, plan.seq_len(), j, p, filter, bias)?;
    let wt = filter_by_patch(filter, p, k, j);
    let mut out = vec![0.0; b * j];
    for s in 0..b {
        let rows = &f.data()[s * l * k..(s + 1) * l * k];
        for (jj, o) in out[s * j..(s + 1) * j].iter_mut().enumerate() {
            *o = bias.data()[jj] + patch_dot(rows, k, plan.patch(jj), &wt[jj * p * k..(jj + 1) * p * k]);
        }
    }
    finish("patch_reduce", Tensor::from_parts(with_batch(f.rank() == 3, b, &[j]), out))
}

/// Gradients of [`patch_reduce`] with respect to the feature map, filter and bias.
pub fn patch_reduce_backward(
    f: &Tensor,
    plan: &PatchPlan,
    filter: &Tensor,
    bias: &Tensor,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, l, k) = seq_dims("patch_reduce", f)?;
    let (j, p) = (plan.patches(), plan.patch_size());
    check_filter("patch_reduce", l, k, plan.seq_len(), j, p, filter, bias)?;
    let wt = filter_by_patch(filter, p, k, j);
    let mut gf = vec![0.0; f.numel()];
    let mut gwt = vec![0.0; wt.len()];
    let mut gb = vec![0.0; j];
    for s in 0..b {
        let rows = &f.data()[s * l * k..(s + 1) * l * k];
        let grows = &mut gf[s * l * k..(s + 1) * l * k];
        for jj in 0..j {
            let gv = g.data()[s * j + jj];
            gb[jj] += gv;
            if gv == 0.0 {
                continue;
            }
            accumulate_patch_grad(rows, grows, k, plan.patch(jj), &wt[jj * p * k..(jj + 1) * p * k], &mut gwt[jj * p * k..(jj + 1) * p * k], gv);
        }
    }
    Ok((
        Tensor::from_parts(f.dims().to_vec(), gf),
        Tensor::from_parts(filter.dims().to_vec(), filter_from_patch(&gwt, p, k, j)),
        Tensor::from_parts(vec![j], gb),
    ))
}

fn accumulate_patch_grad(
    rows: &[Real],
    grows: &mut [Real],
    k: usize,
    locs: &[u32],
    w: &[Real],
    gw: &mut [Real],
    gv: Real,
) {
    for (slot, &loc) in locs.iter().enumerate() {
        let r = loc as usize * k;
        for c in 0..k {
            grows[r + c] += gv * w[slot * k + c];
            gw[slot * k + c] += gv * rows[r + c];
        }
    }
}

/// Per-step IGLOO reduction: output `[L, J]` (or `[B, L, J]`) where row `t` uses
/// the patches of `plan.step(t)`, which only reach indices `<= t`.
pub fn seq_patch_reduce(
    f: &Tensor,
    plan: &SeqPatchPlan,
    filter: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let (b, l, k) = seq_dims("seq_patch_reduce", f)?;
    let (j, p) = (plan.patches(), plan.patch_size());
    check_filter("seq_patch_reduce", l, k, plan.seq_len(), j, p, filter, bias)?;
    let wt = filter_by_patch(filter, p, k, j);
    let mut out = vec![0.0; b * l * j];
    for s in 0..b {
        let rows = &f.data()[s * l * k..(s + 1) * l * k];
        for t in 0..l {
            let step = plan.step(t);
            let o = &mut out[(s * l + t) * j..(s * l + t + 1) * j];
            for (jj, ov) in o.iter_mut().enumerate() {
                *ov = bias.data()[jj]
                    + patch_dot(rows, k, &step[jj * p..(jj + 1) * p], &wt[jj * p * k..(jj + 1) * p * k]);
            }
        }
    }
    finish(
        "seq_patch_reduce",
        Tensor::from_parts(with_batch(f.rank() == 3, b, &[l, j]), out),
    )
}

/// Gradients of [`seq_patch_reduce`].
pub fn seq_patch_reduce_backward(
    f: &Tensor,
    plan: &SeqPatchPlan,
    filter: &Tensor,
    bias: &Tensor,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, l, k) = seq_dims("seq_patch_reduce", f)?;
    let (j, p) = (plan.patches(), plan.patch_size());
    check_filter("seq_patch_reduce", l, k, plan.seq_len(), j, p, filter, bias)?;
    let wt = filter_by_patch(filter, p, k, j);
    let mut gf = vec![0.0; f.numel()];
    let mut gwt = vec![0.0; wt.len()];
    let mut gb = vec![0.0; j];
    for s in 0..b {
        let rows = &f.data()[s * l * k..(s + 1) * l * k];
        let grows = &mut gf[s * l * k..(s + 1) * l * k];
        for t in 0..l {
            let step = plan.step(t);
            for jj in 0..j {
                let gv = g.data()[(s * l + t) * j + jj];
                gb[jj] += gv;
                if gv == 0.0 {
                    continue;
                }
                accumulate_patch_grad(
                    rows,
                    grows,
                    k,
                    &step[jj * p..(jj + 1) * p],
                    &wt[jj * p * k..(jj + 1) * p * k],
                    &mut gwt[jj * p * k..(jj + 1) * p * k],
                    gv,
                );
            }
        }
    }
    Ok((
        Tensor::from_parts(f.dims().to_vec(), gf),
        Tensor::from_parts(filter.dims().to_vec(), filter_from_patch(&gwt, p, k, j)),
        Tensor::from_parts(vec![j], gb),
    ))
}

/// Channel keep-mask for spatial dropout on a `[L, K]` / `[B, L, K]` map: whole
/// channels are zeroed with probability `rate`, survivors scaled by `1 / (1 - rate)`.
/// The returned mask has the same shape as the feature map.
pub fn spatial_dropout_mask(
    dims: &[usize],
    rate: Real,
    rng: &mut impl rand::Rng,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(alloc::format!("dropout rate must be in [0, 1), got {rate}")));
    }
    let (b, l, k) = match *dims {
        [l, k] => (1, l, k),
        [b, l, k] => (b, l, k),
        _ => return Err(Error::invalid("spatial_dropout", "expected [L, K] or [B, L, K]")),
    };
    let keep = 1.0 / (1.0 - rate);
    let mut data = Vec::with_capacity(b * l * k);
    for _ in 0..b {
        let channel: Vec<Real> = (0..k)
            .map(|_| {
                let u: f64 = rng.random();
                if (u as Real) < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        for _ in 0..l {
            data.extend_from_slice(&channel);
        }
    }
    Ok(Tensor::from_parts(dims.to_vec(), data))
}

/// Spatial dropout (`training == false` or `rate == 0` is the identity).
pub fn spatial_dropout(
    f: &Tensor,
    rate: Real,
    training: bool,
    rng: &mut impl rand::Rng,
) -> Result<Tensor> {
    if !training || rate == 0.0 {
        return Ok(f.clone());
    }
    let mask = spatial_dropout_mask(f.dims(), rate, rng)?;
    super::mul(f, &mask)
}
