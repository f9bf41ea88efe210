//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Persistent [`Tensor`] values hold parameters between optimisation steps.
//! Each forward pass binds parameters onto a fresh [`tape::Tape`], builds the
//! computation there, and copies gradients back out after `backward`. All
//! arithmetic is 64-bit and sequenced identically from run to run, so results
//! are bitwise reproducible for a fixed seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod adam;
pub mod mlp;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{BoundMlp, Mlp};
pub use tape::{Tape, TensorId};

/// A dense row-major matrix of `f64` with an optional gradient accumulator.
///
/// Vectors are represented as `1 x n` matrices so every value on the tape has
/// exactly two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Accumulated gradient, same layout as `data`. `None` until a backward
    /// pass has deposited into this tensor.
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols], grad: None, requires_grad: true }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data, grad: None, requires_grad: true })
    }

    /// Glorot-uniform initialisation: entries drawn from
    /// `U(-sqrt(6/(rows+cols)), sqrt(6/(rows+cols)))`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new(-limit, limit);
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Tensor { rows, cols, data, grad: None, requires_grad: true }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Adds `g` into the gradient accumulator, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for a tensor of length {}",
                g.len(),
                self.data.len()
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (acc, &gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

// ── checkpointing ──────────────────────────────────────────────────────────

/// Version written into every checkpoint; loading any other version fails.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    tensors: BTreeMap<String, TensorRecord>,
}

/// Writes named tensors as JSON. `f64` values survive the round trip exactly.
pub fn save_checkpoint(path: &Path, named: &[(String, &Tensor)]) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, t) in named {
        let prev = tensors.insert(
            name.clone(),
            TensorRecord { shape: [t.rows, t.cols], data: t.data.clone() },
        );
        if prev.is_some() {
            return Err(Error::Contract(format!("duplicate tensor name {name:?} in checkpoint")));
        }
    }
    let file = CheckpointFile { format_version: CHECKPOINT_FORMAT_VERSION, tensors };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Checkpoint(format!("serialisation failed: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads a checkpoint back into name-keyed tensors (gradients cleared).
pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let raw = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&raw)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} is not supported (expected {})",
            path.display(),
            file.format_version,
            CHECKPOINT_FORMAT_VERSION
        )));
    }
    let mut out = BTreeMap::new();
    for (name, rec) in file.tensors {
        let t = Tensor::from_vec(rec.shape[0], rec.shape[1], rec.data).map_err(|e| {
            Error::Checkpoint(format!("{}: tensor {name:?}: {e}", path.display()))
        })?;
        out.insert(name, t);
    }
    Ok(out)
}

// ── numerical differentiation oracle ───────────────────────────────────────

/// Central finite differences: `(f(x+eps e_i) - f(x-eps e_i)) / (2 eps)` for
/// every coordinate. Used by tests as an implementation-independent reference
/// for analytic gradients.
pub fn central_difference_grad<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let saved = probe[i];
        probe[i] = saved + eps;
        let plus = f(&probe);
        probe[i] = saved - eps;
        let minus = f(&probe);
        probe[i] = saved;
        grad.push((plus - minus) / (2.0 * eps));
    }
    grad
}

/// Relative error between an analytic and a numerical derivative, guarded
/// against division by zero for near-zero pairs.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}
