//! Dense row-major tensors.
//!
//! Axis conventions: unbatched sequences are `(time, channel)`, batched ones are
//! `(batch, time, channel)`. Every op returns a fresh tensor; inputs are never
//! mutated.
//!
//! In checked mode every op verifies that its result is finite and fails with
//! [`Error::Numerics`] otherwise. Checked mode defaults to on in builds with debug
//! assertions and off otherwise; [`set_checked`] overrides it process-wide.

mod ops;
mod seq;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU8, Ordering};

use crate::{Error, Real, Result};

pub use ops::*;
pub use seq::*;

/// Extents of a tensor. A rank-0 shape describes a scalar.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    /// Fails if any extent is zero.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("shape", alloc::format!("zero extent in {:?}", dims)));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub(crate) fn from_unchecked(dims: Vec<usize>) -> Self {
        debug_assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        Shape(dims)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<Real>,
}

impl Tensor {
    /// Wraps `data` (row-major) with the given extents.
    pub fn new(dims: &[usize], data: Vec<Real>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != data.len() {
            return Err(Error::invalid(
                "tensor",
                alloc::format!("shape {} needs {} elements, got {}", shape, shape.numel(), data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<Real>) -> Self {
        let shape = Shape::from_unchecked(dims);
        debug_assert_eq!(shape.numel(), data.len());
        Self { shape, data }
    }

    pub fn scalar(value: Real) -> Self {
        Self {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: &[usize], value: Real) -> Self {
        let shape = Shape::from_unchecked(dims.to_vec());
        let n = shape.numel();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> Real) -> Self {
        let shape = Shape::from_unchecked(dims.to_vec());
        let data = (0..shape.numel()).map(f).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> Real {
        assert_eq!(index.len(), self.rank(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(self.dims()) {
            assert!(i < d, "index {i} out of bound {d}");
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<Real> {
        if self.numel() != 1 {
            return Err(Error::invalid("item", alloc::format!("expected one element, shape {}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// Same data, new extents.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<Real> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, Real::max),
        )
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> Real {
        self.data.iter().map(|v| v * v).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

// 0 = unset (follow debug_assertions), 1 = on, 2 = off
static CHECKED: AtomicU8 = AtomicU8::new(0);

/// Turns non-finite detection on or off for every op in the process.
pub fn set_checked(on: bool) {
    CHECKED.store(if on { 1 } else { 2 }, Ordering::Relaxed);
}

pub fn is_checked() -> bool {
    match CHECKED.load(Ordering::Relaxed) {
        1 => true,
        2 => false,
        _ => cfg!(debug_assertions),
    }
}

pub(crate) fn finish(op: &'static str, t: Tensor) -> Result<Tensor> {
    if is_checked() && !t.is_finite() {
        return Err(Error::Numerics(alloc::format!(
            "non-finite value produced by {op} (shape {})",
            t.shape
        )));
    }
    Ok(t)
}
