//! Adam with global gradient-norm clipping.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::ParamStore;
use crate::tensor::{is_checked, Tensor};
use crate::{math, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Euclidean norm of all gradients taken together.
pub fn global_norm(grads: &[Tensor]) -> Real {
    math::sqrt(grads.iter().map(Tensor::norm_sq).sum())
}

/// Rescales `grads` jointly so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: Real) -> Real {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Adam state: step count and first/second moments, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.dims())).collect();
        Ok(Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// Restores saved moments; shapes must match `store`.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        if m.len() != store.len() || v.len() != store.len() {
            return Err(Error::Config("optimizer state does not match the parameters".into()));
        }
        for ((mt, vt), (name, p)) in m.iter().zip(&v).zip(store.iter()) {
            if mt.shape() != p.shape() || vt.shape() != p.shape() {
                return Err(Error::Config(format!("optimizer state for `{name}` has the wrong shape")));
            }
        }
        Ok(Self { config, step, m, v })
    }

    /// One bias-corrected update. Gradients must already be clipped.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Config(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        if is_checked() {
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numerics(format!("non-finite gradient for `{}`", store.name(i))));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as Real;
        let c1 = 1.0 - math::pow(beta1, t);
        let c2 = 1.0 - math::pow(beta2, t);
        for (id, g) in grads.iter().enumerate() {
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape("adam", store.get(id).shape(), g.shape()));
            }
            let (m, v) = (self.m[id].data_mut(), self.v[id].data_mut());
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (math::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }

    /// Clips `grads` to `clip_norm` (if any) and applies one update; returns the pre-clip norm.
    pub fn step(&mut self, store: &mut ParamStore, mut grads: Vec<Tensor>, clip_norm: Option<Real>) -> Result<Real> {
        let norm = match clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => global_norm(&grads),
        };
        self.update(store, &grads)?;
        Ok(norm)
    }
}
