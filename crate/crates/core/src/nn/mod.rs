//! Minimal dense-tensor autodiff engine: tensors, parameter sets, an Adam
//! optimizer with global-norm gradient clipping, and exact-round-trip
//! checkpoints.

pub mod gradcheck;
mod tensor;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::NnError;

pub use tensor::{backward, no_grad, Tensor};
pub(crate) use tensor::{sigmoid, softplus};

const CKPT_MAGIC: &[u8; 4] = b"DSCP";
const CKPT_VERSION: u32 = 1;

/// Adam hyperparameters with a global-norm gradient clip.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: 0.4 }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named learnable tensors plus per-parameter optimizer state.
///
/// Names are unique and iteration order is the sorted name order, so update
/// and serialization order is deterministic.
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet { params: BTreeMap::new(), moments: BTreeMap::new(), step: 0 }
    }

    /// Registers a tensor under a unique name. Learnable tensors must be
    /// created with `Tensor::param`; non-learnable state (e.g. router
    /// selection biases) may be registered as plain tensors and is
    /// checkpointed but skipped by the optimizer.
    pub fn register(&mut self, name: &str, t: Tensor) -> Tensor {
        assert!(
            self.params.insert(name.to_string(), t.clone()).is_none(),
            "duplicate parameter name {name}"
        );
        t
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.params.get(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all registered tensors.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|t| t.value().len()).sum()
    }

    pub fn zero_grad(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Global L2 norm over all gradients (missing gradients count as zero).
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        for t in self.params.values() {
            if let Some(g) = t.grad() {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    /// Clips gradients to `max_grad_norm` (global norm), applies one Adam
    /// update to every learnable tensor with a gradient, then zeroes grads.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        for (name, t) in &self.params {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFiniteGrad(name.clone()));
                }
            }
        }
        let norm = self.grad_norm();
        let clip = if norm > cfg.max_grad_norm && norm > 0.0 { cfg.max_grad_norm / norm } else { 1.0 };

        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);

        for (name, t) in &self.params {
            let Some(grad) = t.grad() else { continue };
            if !t.requires_grad() {
                continue;
            }
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            let mut data = t.value();
            for i in 0..grad.len() {
                let g = grad[i] * clip;
                mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
                mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = mom.m[i] / bc1;
                let vhat = mom.v[i] / bc2;
                data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
            t.set_data(data);
        }
        self.zero_grad();
        Ok(())
    }

    /// Writes parameters (and optimizer state) to a binary checkpoint.
    /// Values round-trip exactly.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            write_name(&mut buf, name);
            let shape = t.shape();
            buf.push(t.requires_grad() as u8);
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in &shape {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.value() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.moments.len() as u32).to_le_bytes());
        for (name, mom) in &self.moments {
            write_name(&mut buf, name);
            buf.extend_from_slice(&(mom.m.len() as u32).to_le_bytes());
            for v in mom.m.iter().chain(mom.v.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParameterSet::save`].
    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Cursor { bytes: &bytes, pos: 0 };
        if r.take(4)? != &CKPT_MAGIC[..] {
            return Err(NnError::CheckpointFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(NnError::CheckpointFormat(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let name = r.name()?;
            let learnable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            let t = if learnable { Tensor::param(&shape, data) } else { Tensor::from_vec(&shape, data) };
            set.params.insert(name, t);
        }
        set.step = r.u64()?;
        let mcount = r.u32()? as usize;
        for _ in 0..mcount {
            let name = r.name()?;
            let n = r.u32()? as usize;
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                m.push(r.f64()?);
            }
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(r.f64()?);
            }
            set.moments.insert(name, Moments { m, v });
        }
        Ok(set)
    }
}

fn write_name(buf: &mut Vec<u8>, name: &str) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::CheckpointFormat("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String, NnError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| NnError::CheckpointFormat("bad utf8 in name".into()))
    }
}

/// Xavier-uniform initialization.
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(&[rows, cols], data)
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::param(shape, vec![0.0; shape.iter().product()])
}
