//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IGLO"  u32 version
//! u32 len, config text (UTF-8)
//! u32 plans, each:
//!     u8 kind (0 global, 1 per-step), u32 L, u32 J, u32 p,
//!     u8 placement (0 random, 1 deterministic, 2 gaussian + f64 sigma),
//!     u8 has_seed [+ u64 seed], u32 count, count x u32 locations
//! u32 tensors, each: u32 len, name, tensor
//! u8 has_optimizer [+ u64 step, u32 count, count x tensor (m), count x tensor (v)]
//!
//! tensor = u32 rank, rank x u32 dims, numel x f64
//! ```

use std::path::Path;
use std::sync::Arc;

use igloo_core::model::{ModelConfig, Network, Plan};
use igloo_core::optim::{Adam, AdamConfig};
use igloo_core::plan::{PatchPlan, Placement, SeqPatchPlan};
use igloo_core::{Real, Tensor};

use crate::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"IGLO";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// Everything needed to rebuild a network and resume its optimiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The resolved run configuration as written to `config.txt`.
    pub config: String,
    pub plans: Vec<Plan>,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn capture(net: &Network, config: &str, optimizer: Option<&Adam>) -> Self {
        Self {
            config: config.to_string(),
            plans: net.plans(),
            tensors: net
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            optimizer: optimizer.map(|a| OptimizerState {
                step: a.step,
                m: a.m.clone(),
                v: a.v.clone(),
            }),
        }
    }

    /// Builds a network of shape `model` carrying the stored plans and weights.
    pub fn restore(&self, model: ModelConfig) -> Result<Network> {
        let mut net = Network::new(model, 0)?;
        net.set_plans(self.plans.clone())?;
        if self.tensors.len() != net.params().len() {
            return Err(bad(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                net.params().len()
            )));
        }
        for (name, t) in &self.tensors {
            net.params_mut().assign(name, t.clone())?;
        }
        Ok(net)
    }

    /// The stored optimiser state bound to `net`'s parameters, if any.
    pub fn restore_adam(&self, config: AdamConfig, net: &Network) -> Result<Option<Adam>> {
        self.optimizer
            .as_ref()
            .map(|s| Adam::from_state(config, s.step, s.m.clone(), s.v.clone(), net.params()))
            .transpose()
            .map_err(Into::into)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config.as_bytes());
        w.u32(self.plans.len() as u32);
        for plan in &self.plans {
            w.plan(plan);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.bytes(name.as_bytes());
            w.tensor(t);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.step);
                w.u32(s.m.len() as u32);
                s.m.iter().chain(&s.v).for_each(|t| w.tensor(t));
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not an IGLOO checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }
        let config = r.string()?;
        let plans = (0..r.u32()?).map(|_| r.plan()).collect::<Result<_>>()?;
        let tensors = (0..r.u32()?)
            .map(|_| Ok((r.string()?, r.tensor()?)))
            .collect::<Result<_>>()?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let n = r.u32()?;
                let m = (0..n).map(|_| r.tensor()).collect::<Result<_>>()?;
                let v = (0..n).map(|_| r.tensor()).collect::<Result<_>>()?;
                Some(OptimizerState { step, m, v })
            }
            t => return Err(bad(format!("invalid optimizer flag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            plans,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            HarnessError::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.dims().len() as u32);
        t.dims().iter().for_each(|&d| self.u32(d as u32));
        t.data().iter().for_each(|&v| self.f64(v as f64));
    }

    fn plan(&mut self, plan: &Plan) {
        let (kind, l, j, p, placement, seed, locations) = match plan {
            Plan::Global(pp) => (0, pp.seq_len(), pp.patches(), pp.patch_size(), pp.placement(), pp.seed(), pp.locations()),
            Plan::PerStep(sp) => (1, sp.seq_len(), sp.patches(), sp.patch_size(), sp.placement(), sp.seed(), sp.locations()),
        };
        self.u8(kind);
        self.u32(l as u32);
        self.u32(j as u32);
        self.u32(p as u32);
        match placement {
            Placement::Random => self.u8(0),
            Placement::Deterministic => self.u8(1),
            Placement::Gaussian { sigma } => {
                self.u8(2);
                self.f64(sigma as f64);
            }
        }
        match seed {
            None => self.u8(0),
            Some(s) => {
                self.u8(1);
                self.u64(s);
            }
        }
        self.u32(locations.len() as u32);
        locations.iter().for_each(|&i| self.u32(i));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        if n.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(bad(format!("tensor {dims:?} runs past the end of the file")));
        }
        let data = (0..n).map(|_| self.f64().map(|v| v as Real)).collect::<Result<_>>()?;
        Ok(Tensor::new(&dims, data)?)
    }

    fn plan(&mut self) -> Result<Plan> {
        let kind = self.u8()?;
        let l = self.u32()? as usize;
        let j = self.u32()? as usize;
        let p = self.u32()? as usize;
        let placement = match self.u8()? {
            0 => Placement::Random,
            1 => Placement::Deterministic,
            2 => Placement::Gaussian {
                sigma: self.f64()? as Real,
            },
            t => return Err(bad(format!("invalid placement tag {t}"))),
        };
        let seed = match self.u8()? {
            0 => None,
            1 => Some(self.u64()?),
            t => return Err(bad(format!("invalid seed flag {t}"))),
        };
        let n = self.u32()? as usize;
        if n.saturating_mul(4) > self.bytes.len() - self.pos {
            return Err(bad("plan runs past the end of the file"));
        }
        let locations = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        Ok(match kind {
            0 => Plan::Global(Arc::new(PatchPlan::from_parts(l, j, p, placement, seed, locations)?)),
            1 => Plan::PerStep(Arc::new(SeqPatchPlan::from_parts(l, j, p, placement, seed, locations)?)),
            t => return Err(bad(format!("invalid plan kind {t}"))),
        })
    }
}
