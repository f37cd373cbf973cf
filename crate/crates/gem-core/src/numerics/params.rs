//! Named parameter collections, Adam, Glorot initialization and the
//! versioned JSON checkpoint format.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::numerics::tensor::Tensor2;

pub const CHECKPOINT_FORMAT: &str = "gem-params-v1";

/// Gradients keyed by parameter name; merged deterministically.
pub type GradMap = BTreeMap<String, Tensor2>;

pub fn merge_grads(into: &mut GradMap, from: &GradMap) {
    for (name, g) in from {
        match into.get_mut(name) {
            Some(acc) => acc.add_assign(g),
            None => {
                into.insert(name.clone(), g.clone());
            }
        }
    }
}

pub fn scale_grads(grads: &mut GradMap, s: f64) {
    for g in grads.values_mut() {
        g.scale(s);
    }
}

#[derive(Debug, Clone)]
struct Slot {
    value: Tensor2,
    grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

/// Parameters with matching gradient and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct ParamSet {
    slots: BTreeMap<String, Slot>,
    pub t: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            slots: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor2) {
        let (r, c) = (value.rows, value.cols);
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                grad: Tensor2::zeros(r, c),
                m: Tensor2::zeros(r, c),
                v: Tensor2::zeros(r, c),
            },
        );
    }

    /// Glorot-uniform initialized parameter drawn from `rng`.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        self.insert(name, Tensor2 { rows, cols, data });
    }

    pub fn names(&self) -> Vec<&str> {
        self.slots.keys().map(|s| s.as_str()).collect()
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| GemError::Structural(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| GemError::Structural(format!("unknown parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| GemError::Structural(format!("unknown parameter {name}")))
    }

    pub fn zero_grads(&mut self) {
        for s in self.slots.values_mut() {
            s.grad.data.fill(0.0);
        }
    }

    /// Load externally accumulated gradients into the set's buffers.
    pub fn set_grads(&mut self, grads: &GradMap) -> Result<()> {
        self.zero_grads();
        for (name, g) in grads {
            let slot = self
                .slots
                .get_mut(name)
                .ok_or_else(|| GemError::Structural(format!("gradient for unknown {name}")))?;
            if g.rows != slot.grad.rows || g.cols != slot.grad.cols {
                return Err(GemError::Structural(format!("gradient shape for {name}")));
            }
            slot.grad = g.clone();
        }
        Ok(())
    }

    /// Standard bias-corrected Adam update, applied in place.
    pub fn adam_step(&mut self, lr: f64, betas: (f64, f64), eps: f64) {
        let (b1, b2) = betas;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for slot in self.slots.values_mut() {
            for i in 0..slot.value.data.len() {
                let g = slot.grad.data[i];
                slot.m.data[i] = b1 * slot.m.data[i] + (1.0 - b1) * g;
                slot.v.data[i] = b2 * slot.v.data[i] + (1.0 - b2) * g * g;
                let m_hat = slot.m.data[i] / c1;
                let v_hat = slot.v.data[i] / c2;
                slot.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Stable digest of the parameter values (shape + bits).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, slot) in &self.slots {
            h.update(name.as_bytes());
            h.update((slot.value.rows as u64).to_le_bytes());
            h.update((slot.value.cols as u64).to_le_bytes());
            for v in &slot.value.data {
                h.update(v.to_le_bytes());
            }
        }
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Versioned checkpoint: parameters plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub arch: String,
    tensors: BTreeMap<String, TensorRecord>,
    pub rng_seed: u64,
    pub train_meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params(
        params: &ParamSet,
        arch: &str,
        rng_seed: u64,
        train_meta: serde_json::Value,
    ) -> Self {
        let tensors = params
            .slots
            .iter()
            .map(|(name, slot)| {
                (
                    name.clone(),
                    TensorRecord {
                        rows: slot.value.rows,
                        cols: slot.value.cols,
                        data: slot.value.data.clone(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            arch: arch.to_string(),
            tensors,
            rng_seed,
            train_meta,
        }
    }

    pub fn into_params(&self) -> Result<ParamSet> {
        let mut ps = ParamSet::new();
        for (name, rec) in &self.tensors {
            ps.insert(
                name,
                Tensor2::from_vec(rec.rows, rec.cols, rec.data.clone())?,
            );
        }
        Ok(ps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            GemError::MissingArtifact(format!("checkpoint {}: {e}", path.display()))
        })?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(GemError::Ingestion(format!(
                "unexpected checkpoint format {:?}",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(1);
        ps.insert_glorot("w", 3, 2, &mut rng);
        let before = ps.value("w").unwrap().clone();
        ps.zero_grads();
        ps.adam_step(0.1, (0.9, 0.999), 1e-8);
        assert_eq!(ps.value("w").unwrap().data, before.data);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor2::from_rows(vec![vec![1.0, -2.0]]).unwrap());
        let mut grads = GradMap::new();
        grads.insert(
            "w".into(),
            Tensor2::from_rows(vec![vec![0.3, -0.7]]).unwrap(),
        );
        ps.set_grads(&grads).unwrap();
        ps.adam_step(0.05, (0.9, 0.999), 1e-8);
        let w = ps.value("w").unwrap();
        // bias correction makes the first update ~= lr * sign(g)
        assert!((w.get(0, 0) - (1.0 - 0.05)).abs() < 1e-6);
        assert!((w.get(0, 1) - (-2.0 + 0.05)).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor2::from_rows(vec![vec![1.0]]).unwrap());
        for _ in 0..200 {
            let x = ps.value("x").unwrap().get(0, 0);
            let mut grads = GradMap::new();
            grads.insert("x".into(), Tensor2::from_rows(vec![vec![2.0 * x]]).unwrap());
            ps.set_grads(&grads).unwrap();
            ps.adam_step(0.1, (0.9, 0.999), 1e-8);
        }
        assert!(ps.value("x").unwrap().get(0, 0).abs() < 1e-2);
    }

    #[test]
    fn lr_zero_is_identity() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor2::from_rows(vec![vec![0.5, -0.5]]).unwrap());
        let mut grads = GradMap::new();
        grads.insert(
            "w".into(),
            Tensor2::from_rows(vec![vec![1.0, 2.0]]).unwrap(),
        );
        ps.set_grads(&grads).unwrap();
        let before = ps.value("w").unwrap().clone();
        ps.adam_step(0.0, (0.9, 0.999), 1e-8);
        assert_eq!(ps.value("w").unwrap().data, before.data);
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let mut ps = ParamSet::new();
        let mut rng = rng_from(9);
        ps.insert_glorot("a", 4, 3, &mut rng);
        ps.insert_glorot("b", 2, 5, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = Checkpoint::from_params(&ps, "gem-nodegcn-v1", 9, serde_json::json!({}));
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap().into_params().unwrap();
        assert_eq!(loaded.digest(), ps.digest());
    }
}
