//! Sequence modelling with IGLOO blocks.
//!
//! IGLOO builds a representation of a sequence from the relationships between
//! non-local patches sliced out of a causal convolution feature map, instead of
//! recurrence or pairwise dot-product attention. This crate holds the whole
//! numerical side of the project:
//!
//! * [`tensor`]: a dense row-major array type and the kernels every layer uses.
//! * [`autodiff`]: a tape-based reverse-mode differentiator and a finite-difference
//!   gradient checker.
//! * [`plan`]: patch placement (which time steps each patch gathers).
//! * [`layers`] and [`model`]: IGLOO-base, its stacked variant, IGLOO-seq, heads and
//!   the networks used by the benchmark tasks.
//! * [`tasks`]: deterministic generators for the copy-memory, addition, (permuted)
//!   sequential MNIST and character language-modelling tasks.
//! * [`optim`] and [`trainer`]: Adam with global-norm clipping, the training loop and
//!   the time-to-threshold benchmark.
//!
//! The crate is `no_std` and only needs `alloc`. Anything touching files, clocks or
//! the command line lives in the companion `igloo-harness` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod layers;
pub mod model;
pub mod optim;
pub mod plan;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};

/// Scalar type used by every tensor.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used by every tensor.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Scalar math routed through `libm` so results do not depend on the platform libm.
pub(crate) mod math {
    use crate::Real;

    #[cfg(not(feature = "f32"))]
    mod imp {
        pub use libm::{exp, log as ln, pow, sqrt};
    }
    #[cfg(feature = "f32")]
    mod imp {
        pub use libm::{expf as exp, logf as ln, powf as pow, sqrtf as sqrt};
    }

    #[inline]
    pub fn exp(x: Real) -> Real {
        imp::exp(x)
    }

    #[inline]
    pub fn ln(x: Real) -> Real {
        imp::ln(x)
    }

    #[inline]
    pub fn sqrt(x: Real) -> Real {
        imp::sqrt(x)
    }

    #[inline]
    pub fn pow(x: Real, y: Real) -> Real {
        imp::pow(x, y)
    }
}
