//! Elementwise, reduction, layout and matrix ops.
//!
//! Binary elementwise ops broadcast numpy style: shapes are right-aligned and
//! each pair of extents must be equal or one of them must be 1.

use alloc::vec;
use alloc::vec::Vec;

use super::{finish, Shape, Tensor};
use crate::{math, Error, Real, Result};

/// Broadcast result shape of two operands.
pub fn broadcast_shape(op: &'static str, a: &Shape, b: &Shape) -> Result<Vec<usize>> {
    let rank = a.rank().max(b.rank());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = dim_from_right(a, rank - 1 - k);
        let db = dim_from_right(b, rank - 1 - k);
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

fn dim_from_right(s: &Shape, k: usize) -> usize {
    let d = s.dims();
    if k < d.len() {
        d[d.len() - 1 - k]
    } else {
        1
    }
}

/// Drops leading unit extents so `[1, J, Z]` behaves as `[J, Z]`.
fn trim_leading_ones(d: &[usize]) -> &[usize] {
    let start = d.iter().position(|&x| x != 1).unwrap_or(d.len());
    &d[start..]
}

/// Strides of `input` viewed inside the broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(out: &[usize], input: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for k in (0..input.len()).rev() {
        if input[k] != 1 {
            strides[k + offset] = acc;
        }
        acc *= input[k];
    }
    strides
}

/// Visits every element of `out` in row-major order together with the matching
/// offsets into two broadcast operands.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..n {
        f(i, oa, ob);
        for k in (0..rank).rev() {
            idx[k] += 1;
            oa += sa[k];
            ob += sb[k];
            if idx[k] < out[k] {
                break;
            }
            oa -= sa[k] * out[k];
            ob -= sb[k] * out[k];
            idx[k] = 0;
        }
    }
}

fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(Real, Real) -> Real,
) -> Result<Tensor> {
    let (da, db) = (a.dims(), b.dims());
    if da == db {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return finish(op, Tensor::from_parts(da.to_vec(), data));
    }
    let tb = trim_leading_ones(db);
    if da.len() >= tb.len() && da.ends_with(tb) {
        let bn = b.numel();
        let data = a
            .data()
            .chunks(bn)
            .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        return finish(op, Tensor::from_parts(da.to_vec(), data));
    }
    let ta = trim_leading_ones(da);
    if db.len() >= ta.len() && db.ends_with(ta) {
        let an = a.numel();
        let data = b
            .data()
            .chunks(an)
            .flat_map(|chunk| a.data().iter().zip(chunk).map(|(&x, &y)| f(x, y)))
            .collect();
        return finish(op, Tensor::from_parts(db.to_vec(), data));
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(&out, da);
    let sb = broadcast_strides(&out, db);
    let mut data = vec![0.0; out.iter().product()];
    for_each_broadcast(&out, &sa, &sb, |i, oa, ob| {
        data[i] = f(a.data()[oa], b.data()[ob]);
    });
    finish(op, Tensor::from_parts(out, data))
}

/// Elementwise sum with broadcasting.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

/// Elementwise difference with broadcasting.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("sub", a, b, |x, y| x - y)
}

/// Elementwise product with broadcasting.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: Real) -> Result<Tensor> {
    finish("scale", a.map(|v| v * c))
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    finish("relu", a.map(|v| if v > 0.0 { v } else { 0.0 }))
}

/// Sums `g` (shaped like a broadcast result) back down to `target`, the shape of
/// one broadcast operand. This is the adjoint of broadcasting.
pub fn sum_to_shape(g: &Tensor, target: &Shape) -> Result<Tensor> {
    let (dg, dt) = (g.dims(), target.dims());
    if dg == dt {
        return Ok(g.clone());
    }
    let tt = trim_leading_ones(dt);
    let mut data = vec![0.0; target.numel()];
    if dg.len() >= tt.len() && dg.ends_with(tt) {
        for chunk in g.data().chunks(data.len()) {
            for (acc, &v) in data.iter_mut().zip(chunk) {
                *acc += v;
            }
        }
    } else {
        let out = broadcast_shape("sum_to_shape", g.shape(), target)?;
        if out != dg {
            return Err(Error::shape("sum_to_shape", g.shape(), target));
        }
        let st = broadcast_strides(dg, dt);
        let zeros = vec![0; dg.len()];
        for_each_broadcast(dg, &st, &zeros, |i, ot, _| data[ot] += g.data()[i]);
    }
    finish("sum_to_shape", Tensor::from_parts(dt.to_vec(), data))
}

/// Sums over the listed axes, removing them. Summing every axis yields a scalar.
pub fn sum_axes(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let dims = a.dims();
    let mut reduce = vec![false; dims.len()];
    for &ax in axes {
        if ax >= dims.len() || reduce[ax] {
            return Err(Error::invalid("sum_axes", alloc::format!("bad axis {ax} for shape {}", a.shape())));
        }
        reduce[ax] = true;
    }
    let out_dims: Vec<usize> = dims
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    // strides of the output laid over the input's axes, zero on reduced axes
    let mut strides = vec![0; dims.len()];
    let mut acc = 1;
    for k in (0..dims.len()).rev() {
        if !reduce[k] {
            strides[k] = acc;
            acc *= dims[k];
        }
    }
    let mut data = vec![0.0; acc];
    let zeros = vec![0; dims.len()];
    for_each_broadcast(dims, &strides, &zeros, |i, o, _| data[o] += a.data()[i]);
    finish("sum_axes", Tensor::from_parts(out_dims, data))
}

/// Inserts a new axis at `axis` with extent `reps`, duplicating the input along it.
pub fn tile(a: &Tensor, axis: usize, reps: usize) -> Result<Tensor> {
    let dims = a.dims();
    if axis > dims.len() || reps == 0 {
        return Err(Error::invalid("tile", alloc::format!("axis {axis}, reps {reps} for shape {}", a.shape())));
    }
    let inner: usize = dims[axis..].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims.insert(axis, reps);
    let mut data = Vec::with_capacity(a.numel() * reps);
    for chunk in a.data().chunks(inner) {
        for _ in 0..reps {
            data.extend_from_slice(chunk);
        }
    }
    Ok(Tensor::from_parts(out_dims, data))
}

/// Swaps the last two axes.
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let dims = a.dims();
    if dims.len() < 2 {
        return Err(Error::invalid("transpose", alloc::format!("rank {} < 2", dims.len())));
    }
    let (r, c) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let mut out_dims = dims.to_vec();
    let n = out_dims.len();
    out_dims.swap(n - 2, n - 1);
    let mut data = vec![0.0; a.numel()];
    for (src, dst) in a.data().chunks(r * c).zip(data.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    Ok(Tensor::from_parts(out_dims, data))
}

/// Keeps `start..end` along `axis`.
pub fn slice(a: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    let dims = a.dims();
    if axis >= dims.len() || start >= end || end > dims[axis] {
        return Err(Error::invalid(
            "slice",
            alloc::format!("range {start}..{end} on axis {axis} of {}", a.shape()),
        ));
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims[axis] = end - start;
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * dims[axis] * inner;
        data.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
    }
    Ok(Tensor::from_parts(out_dims, data))
}

/// Adjoint of [`slice`]: places `g` at `start..` along `axis` in a zero tensor of `full` shape.
pub fn unslice(g: &Tensor, full: &Shape, axis: usize, start: usize) -> Tensor {
    let dims = full.dims();
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let len = g.dims()[axis];
    let mut data = vec![0.0; full.numel()];
    for o in 0..outer {
        let dst = o * dims[axis] * inner + start * inner;
        let src = o * len * inner;
        data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    Tensor::from_parts(dims.to_vec(), data)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    let dims = first.dims();
    if axis >= dims.len() {
        return Err(Error::invalid("concat", alloc::format!("axis {axis} for shape {}", first.shape())));
    }
    let mut total = 0;
    for p in parts {
        let pd = p.dims();
        if pd.len() != dims.len()
            || pd[..axis] != dims[..axis]
            || pd[axis + 1..] != dims[axis + 1..]
        {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
        total += pd[axis];
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let w = p.dims()[axis] * inner;
            data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(out_dims, data))
}

/// `out[m x q] += a[m x n] . b[n x q]`
pub(crate) fn gemm(m: usize, n: usize, q: usize, a: &[Real], b: &[Real], out: &mut [Real]) {
    for i in 0..m {
        let row = &mut out[i * q..(i + 1) * q];
        for (k, &aik) in a[i * n..(i + 1) * n].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in row.iter_mut().zip(&b[k * q..(k + 1) * q]) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out[m x n] += g[m x q] . b[n x q]^T`
fn gemm_nt(m: usize, n: usize, q: usize, g: &[Real], b: &[Real], out: &mut [Real]) {
    for i in 0..m {
        let gi = &g[i * q..(i + 1) * q];
        for k in 0..n {
            let bk = &b[k * q..(k + 1) * q];
            out[i * n + k] += gi.iter().zip(bk).map(|(x, y)| x * y).sum::<Real>();
        }
    }
}

/// `out[n x q] += a[m x n]^T . g[m x q]`
fn gemm_tn(m: usize, n: usize, q: usize, a: &[Real], g: &[Real], out: &mut [Real]) {
    for i in 0..m {
        let gi = &g[i * q..(i + 1) * q];
        for (k, &aik) in a[i * n..(i + 1) * n].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &gv) in out[k * q..(k + 1) * q].iter_mut().zip(gi) {
                *o += aik * gv;
            }
        }
    }
}

enum MatmulLayout {
    /// identical leading dims
    Batched { batch: usize },
    /// `b` is a plain matrix shared by every slice of `a`
    SharedRhs { rows: usize },
    /// `a` is a plain matrix shared by every slice of `b`
    SharedLhs { batch: usize },
}

fn matmul_layout(a: &Tensor, b: &Tensor) -> Result<(MatmulLayout, usize, usize, usize, Vec<usize>)> {
    let (da, db) = (a.dims(), b.dims());
    if da.len() < 2 || db.len() < 2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, n) = (da[da.len() - 2], da[da.len() - 1]);
    let (n2, q) = (db[db.len() - 2], db[db.len() - 1]);
    if n != n2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ba, bb) = (&da[..da.len() - 2], &db[..db.len() - 2]);
    let (layout, lead) = if ba == bb {
        (MatmulLayout::Batched { batch: ba.iter().product() }, ba)
    } else if bb.is_empty() {
        (MatmulLayout::SharedRhs { rows: ba.iter().product::<usize>() * m }, ba)
    } else if ba.is_empty() {
        (MatmulLayout::SharedLhs { batch: bb.iter().product() }, bb)
    } else {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    };
    let mut out_dims = lead.to_vec();
    out_dims.extend([m, q]);
    Ok((layout, m, n, q, out_dims))
}

/// Matrix product over the last two axes. Leading (batch) axes must be equal, or
/// one side must be a plain matrix that is shared across the other side's batch.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (layout, m, n, q, out_dims) = matmul_layout(a, b)?;
    let mut out = vec![0.0; out_dims.iter().product()];
    match layout {
        MatmulLayout::Batched { batch } => {
            for s in 0..batch {
                gemm(
                    m,
                    n,
                    q,
                    &a.data()[s * m * n..(s + 1) * m * n],
                    &b.data()[s * n * q..(s + 1) * n * q],
                    &mut out[s * m * q..(s + 1) * m * q],
                );
            }
        }
        MatmulLayout::SharedRhs { rows } => gemm(rows, n, q, a.data(), b.data(), &mut out),
        MatmulLayout::SharedLhs { batch } => {
            for s in 0..batch {
                gemm(
                    m,
                    n,
                    q,
                    a.data(),
                    &b.data()[s * n * q..(s + 1) * n * q],
                    &mut out[s * m * q..(s + 1) * m * q],
                );
            }
        }
    }
    finish("matmul", Tensor::from_parts(out_dims, out))
}

/// Gradients of `matmul(a, b)` given the upstream gradient `g`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (layout, m, n, q, out_dims) = matmul_layout(a, b)?;
    if g.dims() != out_dims.as_slice() {
        return Err(Error::shape("matmul_backward", g.shape(), &Shape::from_unchecked(out_dims)));
    }
    let mut ga = vec![0.0; a.numel()];
    let mut gb = vec![0.0; b.numel()];
    match layout {
        MatmulLayout::Batched { batch } => {
            for s in 0..batch {
                let gs = &g.data()[s * m * q..(s + 1) * m * q];
                gemm_nt(m, n, q, gs, &b.data()[s * n * q..(s + 1) * n * q], &mut ga[s * m * n..(s + 1) * m * n]);
                gemm_tn(m, n, q, &a.data()[s * m * n..(s + 1) * m * n], gs, &mut gb[s * n * q..(s + 1) * n * q]);
            }
        }
        MatmulLayout::SharedRhs { rows } => {
            gemm_nt(rows, n, q, g.data(), b.data(), &mut ga);
            gemm_tn(rows, n, q, a.data(), g.data(), &mut gb);
        }
        MatmulLayout::SharedLhs { batch } => {
            for s in 0..batch {
                let gs = &g.data()[s * m * q..(s + 1) * m * q];
                gemm_nt(m, n, q, gs, &b.data()[s * n * q..(s + 1) * n * q], &mut ga);
                gemm_tn(m, n, q, a.data(), gs, &mut gb[s * n * q..(s + 1) * n * q]);
            }
        }
    }
    Ok((
        Tensor::from_parts(a.dims().to_vec(), ga),
        Tensor::from_parts(b.dims().to_vec(), gb),
    ))
}

/// Softmax over the last axis, computed with max subtraction.
pub fn softmax_lastaxis(a: &Tensor) -> Result<Tensor> {
    let n = *a
        .dims()
        .last()
        .ok_or_else(|| Error::invalid("softmax", "scalar input"))?;
    let mut data = a.data().to_vec();
    for row in data.chunks_mut(n) {
        softmax_in_place(row);
    }
    finish("softmax", Tensor::from_parts(a.dims().to_vec(), data))
}

fn softmax_in_place(row: &mut [Real]) {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Vector-Jacobian product of softmax: `y * (g - <g, y>)` per last-axis row.
pub fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let n = *y.dims().last().unwrap_or(&1);
    let mut out = vec![0.0; y.numel()];
    for ((yr, gr), or) in y.data().chunks(n).zip(g.data().chunks(n)).zip(out.chunks_mut(n)) {
        let dot: Real = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.dims().to_vec(), out)
}

/// Mean cross-entropy of `logits[N, C]` against class indices, fused with softmax.
/// Returns the loss and the softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(Real, Tensor)> {
    let dims = logits.dims();
    if dims.len() != 2 || dims[0] != targets.len() {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            alloc::format!("logits {} vs {} targets", logits.shape(), targets.len()),
        ));
    }
    let c = dims[1];
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Data(alloc::format!("class index {bad} out of range for {c} classes")));
    }
    let mut probs = logits.data().to_vec();
    let mut loss = 0.0;
    for (row, (src, &t)) in probs.chunks_mut(c).zip(logits.data().chunks(c).zip(targets)) {
        let max = src.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let lse = math::ln(src.iter().map(|&v| math::exp(v - max)).sum::<Real>()) + max;
        loss += lse - src[t];
        softmax_in_place(row);
    }
    let loss = loss / targets.len() as Real;
    if is_checked_nonfinite(loss) {
        return Err(Error::Numerics("non-finite cross-entropy".into()));
    }
    Ok((loss, Tensor::from_parts(dims.to_vec(), probs)))
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Real> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", pred.shape(), target.shape()));
    }
    let s: Real = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let loss = s / pred.numel() as Real;
    if is_checked_nonfinite(loss) {
        return Err(Error::Numerics("non-finite mse".into()));
    }
    Ok(loss)
}

fn is_checked_nonfinite(v: Real) -> bool {
    super::is_checked() && !v.is_finite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(dims: &[usize], data: &[Real]) -> Tensor {
        Tensor::new(dims, data.to_vec()).unwrap()
    }

    fn random(dims: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let v = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&id, &v).unwrap().data(), &[3.0, 4.0]);
        let row = t(&[1, 2], &[1.0, 2.0]);
        assert_eq!(matmul(&row, &v).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[3, 4], 1);
        let b = random(&[4, 2], 2);
        let got = matmul(&a, &b).unwrap();
        let mut want = Tensor::zeros(&[3, 2]);
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.at(&[i, k]) * b.at(&[k, j]);
                }
                want.data_mut()[i * 2 + j] = s;
            }
        }
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_batched_and_shared_layouts() {
        let a = random(&[2, 3, 4], 3);
        let b = random(&[4, 5], 4);
        let shared = matmul(&a, &b).unwrap();
        assert_eq!(shared.dims(), &[2, 3, 5]);
        let b2 = tile(&b, 0, 2).unwrap();
        let batched = matmul(&a, &b2).unwrap();
        assert!(shared.max_abs_diff(&batched).unwrap() < 1e-12);
        let lhs = random(&[3, 4], 5);
        let bb = random(&[2, 4, 5], 6);
        let left = matmul(&lhs, &bb).unwrap();
        let left2 = matmul(&tile(&lhs, 0, 2).unwrap(), &bb).unwrap();
        assert!(left.max_abs_diff(&left2).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_lastaxis(&t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        for &v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = softmax_lastaxis(&t(&[2], &[1000.0, 1000.0])).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
        let l3 = softmax_lastaxis(&t(&[2], &[0.0, math::ln(3.0)])).unwrap();
        assert!((l3.data()[0] - 0.25).abs() < 1e-15);
        assert!((l3.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn tile_sum_relu_examples() {
        let tiled = tile(&t(&[2], &[1.0, 2.0]), 0, 3).unwrap();
        assert_eq!(tiled.dims(), &[3, 2]);
        assert_eq!(tiled.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let (p, k, j) = (4, 5, 3);
        let s = sum_axes(&Tensor::ones(&[p, k, j]), &[0, 1]).unwrap();
        assert_eq!(s.dims(), &[j]);
        assert!(s.data().iter().all(|&v| v == (p * k) as Real));
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn broadcasting_matches_naive_loops() {
        let a = random(&[2, 3, 4], 7);
        let bias = random(&[4], 8);
        let col = random(&[3, 1], 9);
        let got = add(&a, &bias).unwrap();
        let got2 = mul(&a, &col).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    let x = a.at(&[i, j, k]);
                    assert_eq!(got.at(&[i, j, k]), x + bias.at(&[k]));
                    assert_eq!(got2.at(&[i, j, k]), x * col.at(&[j, 0]));
                }
            }
        }
        assert!(matches!(add(&a, &random(&[3], 1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn sum_to_shape_is_adjoint_of_broadcast() {
        let g = random(&[2, 3, 4], 10);
        let s = sum_to_shape(&g, &Shape::new(vec![3, 1]).unwrap()).unwrap();
        for j in 0..3 {
            let mut want = 0.0;
            for i in 0..2 {
                for k in 0..4 {
                    want += g.at(&[i, j, k]);
                }
            }
            assert!((s.at(&[j, 0]) - want).abs() < 1e-12);
        }
        let lead = sum_to_shape(&g, &Shape::new(vec![1, 3, 4]).unwrap()).unwrap();
        assert_eq!(lead.dims(), &[1, 3, 4]);
    }

    #[test]
    fn transpose_slice_concat() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(transpose(&a).unwrap().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let s = slice(&a, 1, 1, 3).unwrap();
        assert_eq!(s.data(), &[2.0, 3.0, 5.0, 6.0]);
        let back = unslice(&s, a.shape(), 1, 1);
        assert_eq!(back.data(), &[0.0, 2.0, 3.0, 0.0, 5.0, 6.0]);
        let c = concat(&[&a, &s], 1).unwrap();
        assert_eq!(c.dims(), &[2, 5]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_c() {
        let (loss, probs) = softmax_cross_entropy(&Tensor::zeros(&[3, 8]), &[0, 5, 7]).unwrap();
        assert!((loss - math::ln(8.0)).abs() < 1e-12);
        assert!(probs.data().iter().all(|&p| (p - 0.125).abs() < 1e-15));
        assert!(matches!(
            softmax_cross_entropy(&Tensor::zeros(&[1, 8]), &[8]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn mse_value() {
        let loss = mse(&t(&[2], &[1.0, 2.0]), &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(loss, 2.5);
    }
}
