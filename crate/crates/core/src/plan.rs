//! Patch placement.
//!
//! A patch is a group of `p` time indices into a feature map of length `L`. An
//! IGLOO reduction gathers `J` such patches. [`PatchPlan`] holds one fixed set of
//! `J` patches over the whole sequence (IGLOO-base); [`SeqPatchPlan`] holds one set
//! per time step, each restricted to indices `<= t` (IGLOO-seq).
//!
//! Plans are drawn once when a model is built and never resampled. The seed that
//! produced a plan is stored with it so checkpoints can be audited.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Real, Result};

/// Default number of time slices per patch.
pub const DEFAULT_PATCH_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Indices i.i.d. uniform over the admissible range.
    Random,
    /// Even stride grid over the admissible range.
    Deterministic,
    /// Per-step only: half-normal offsets below the current step.
    Gaussian { sigma: Real },
}

/// `J` patches of `p` indices each over a sequence of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    patches: usize,
    patch_size: usize,
    seq_len: usize,
    placement: Placement,
    seed: Option<u64>,
    locations: Vec<u32>,
}

impl PatchPlan {
    /// Rebuilds a plan from stored parts, validating every index.
    pub fn from_parts(
        seq_len: usize,
        patches: usize,
        patch_size: usize,
        placement: Placement,
        seed: Option<u64>,
        locations: Vec<u32>,
    ) -> Result<Self> {
        check_dims(seq_len, patches, patch_size)?;
        if locations.len() != patches * patch_size {
            return Err(Error::Config(format!(
                "plan has {} locations, expected {}x{}",
                locations.len(),
                patches,
                patch_size
            )));
        }
        if let Some(&bad) = locations.iter().find(|&&i| i as usize >= seq_len) {
            return Err(Error::Index {
                index: bad as usize,
                bound: seq_len,
            });
        }
        Ok(Self {
            patches,
            patch_size,
            seq_len,
            placement,
            seed,
            locations,
        })
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Row-major `J x p` index array.
    pub fn locations(&self) -> &[u32] {
        &self.locations
    }

    /// The `p` indices of patch `j`.
    pub fn patch(&self, j: usize) -> &[u32] {
        &self.locations[j * self.patch_size..(j + 1) * self.patch_size]
    }
}

/// One `J x p` index set per time step; step `t` only uses indices in `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqPatchPlan {
    patches: usize,
    patch_size: usize,
    seq_len: usize,
    placement: Placement,
    seed: Option<u64>,
    locations: Vec<u32>,
}

impl SeqPatchPlan {
    pub fn from_parts(
        seq_len: usize,
        patches: usize,
        patch_size: usize,
        placement: Placement,
        seed: Option<u64>,
        locations: Vec<u32>,
    ) -> Result<Self> {
        if patches == 0 || patch_size == 0 || seq_len == 0 {
            return Err(Error::Config(format!(
                "per-step plan needs positive dims, got L={seq_len} J={patches} p={patch_size}"
            )));
        }
        let per_step = patches * patch_size;
        if locations.len() != seq_len * per_step {
            return Err(Error::Config(format!(
                "per-step plan has {} locations, expected {}x{}x{}",
                locations.len(),
                seq_len,
                patches,
                patch_size
            )));
        }
        for (t, step) in locations.chunks(per_step).enumerate() {
            if let Some(&bad) = step.iter().find(|&&i| i as usize > t) {
                return Err(Error::Index {
                    index: bad as usize,
                    bound: t + 1,
                });
            }
        }
        Ok(Self {
            patches,
            patch_size,
            seq_len,
            placement,
            seed,
            locations,
        })
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Row-major `L x J x p` index array.
    pub fn locations(&self) -> &[u32] {
        &self.locations
    }

    /// The `J x p` indices used when producing the output at step `t`.
    pub fn step(&self, t: usize) -> &[u32] {
        let per_step = self.patches * self.patch_size;
        &self.locations[t * per_step..(t + 1) * per_step]
    }
}

fn check_dims(seq_len: usize, patches: usize, patch_size: usize) -> Result<()> {
    if patches == 0 {
        return Err(Error::Config("number of patches J must be >= 1".into()));
    }
    if patch_size == 0 || patch_size > seq_len {
        return Err(Error::Config(format!(
            "patch size p must satisfy 1 <= p <= L, got p={patch_size} L={seq_len}"
        )));
    }
    Ok(())
}

/// Patch indices drawn i.i.d. uniform on `[0, L)`.
pub fn make_random_plan(
    seq_len: usize,
    patches: usize,
    patch_size: usize,
    seed: u64,
) -> Result<PatchPlan> {
    check_dims(seq_len, patches, patch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = u32::try_from(seq_len).map_err(|_| Error::Config("sequence too long".into()))?;
    let locations = (0..patches * patch_size)
        .map(|_| rng.random_range(0..bound))
        .collect();
    Ok(PatchPlan {
        patches,
        patch_size,
        seq_len,
        placement: Placement::Random,
        seed: Some(seed),
        locations,
    })
}

/// Even stride grid: slot `i` of patch `j` gets `floor((j*p + i) * L / (J*p))`.
pub fn make_deterministic_plan(
    seq_len: usize,
    patches: usize,
    patch_size: usize,
) -> Result<PatchPlan> {
    if patches == 0 || patch_size == 0 || seq_len == 0 {
        return Err(Error::Config(format!(
            "deterministic plan needs positive dims, got L={seq_len} J={patches} p={patch_size}"
        )));
    }
    Ok(PatchPlan {
        patches,
        patch_size,
        seq_len,
        placement: Placement::Deterministic,
        seed: None,
        locations: stride_grid(seq_len, patches * patch_size),
    })
}

fn stride_grid(span: usize, slots: usize) -> Vec<u32> {
    (0..slots)
        .map(|k| ((k as u64 * span as u64) / slots as u64) as u32)
        .collect()
}

/// Per-step plan whose indices for step `t` are `round(t - |z|)`, `z ~ N(0, sigma)`,
/// clamped to `[0, t]`. Patches concentrate just behind the current step.
pub fn make_causal_seq_plan(
    seq_len: usize,
    patches: usize,
    patch_size: usize,
    sigma: Real,
    seed: u64,
) -> Result<SeqPatchPlan> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma as f64).map_err(|e| Error::Config(format!("{e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_step = patches * patch_size;
    let mut locations = Vec::with_capacity(seq_len * per_step);
    for t in 0..seq_len {
        for _ in 0..per_step {
            let z: f64 = normal.sample(&mut rng);
            let idx = libm::round(t as f64 - libm::fabs(z));
            locations.push(idx.clamp(0.0, t as f64) as u32);
        }
    }
    SeqPatchPlan::from_parts(
        seq_len,
        patches,
        patch_size,
        Placement::Gaussian { sigma },
        Some(seed),
        locations,
    )
}

/// Per-step plan with indices uniform on `[0, t]`.
pub fn make_uniform_seq_plan(
    seq_len: usize,
    patches: usize,
    patch_size: usize,
    seed: u64,
) -> Result<SeqPatchPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_step = patches * patch_size;
    let mut locations = Vec::with_capacity(seq_len * per_step);
    for t in 0..seq_len as u32 {
        for _ in 0..per_step {
            locations.push(rng.random_range(0..=t));
        }
    }
    SeqPatchPlan::from_parts(
        seq_len,
        patches,
        patch_size,
        Placement::Random,
        Some(seed),
        locations,
    )
}

/// Per-step stride grid over `[0, t]`.
pub fn make_deterministic_seq_plan(
    seq_len: usize,
    patches: usize,
    patch_size: usize,
) -> Result<SeqPatchPlan> {
    let per_step = patches * patch_size;
    let mut locations = Vec::with_capacity(seq_len * per_step);
    for t in 0..seq_len {
        locations.extend(stride_grid(t + 1, per_step));
    }
    SeqPatchPlan::from_parts(
        seq_len,
        patches,
        patch_size,
        Placement::Deterministic,
        None,
        locations,
    )
}
