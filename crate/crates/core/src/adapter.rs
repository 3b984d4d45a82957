//! Residual linear adapter on frozen visual embeddings: `z ↦ z + ρ·W·z`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub weight: Vec<f64>,
    pub enabled: bool,
    /// Residual coefficient ρ.
    pub scale: f64,
}

impl AdapterState {
    /// Zero-initialized adapter, so the initial map is the identity.
    pub fn new(dim: usize, scale: f64, enabled: bool) -> Self {
        Self { dim, weight: vec![0.0; dim * dim], enabled, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, 1.0, false)
    }

    pub fn adapt(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch { what: "adapter input".into(), expected: self.dim, actual: z.len() });
        }
        if !self.enabled {
            return Ok(z.to_vec());
        }
        Ok(self
            .weight
            .chunks_exact(self.dim)
            .zip(z)
            .map(|(row, zi)| zi + self.scale * row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>())
            .collect())
    }

    /// `∂L/∂W = ρ·Σ_i g_i ⊗ z_i` for output gradients `g_i` at inputs `z_i`.
    pub fn weight_gradient(&self, grad_outputs: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dim;
        let mut grad = vec![0.0; d * d];
        for (g, z) in grad_outputs.iter().zip(inputs) {
            for (row, gr) in grad.chunks_exact_mut(d).zip(g) {
                for (cell, zc) in row.iter_mut().zip(z) {
                    *cell += self.scale * gr * zc;
                }
            }
        }
        grad
    }

    /// One SGD step: `W ← W − lr·ρ·Σ_i g_i ⊗ z_i`. No-op when disabled.
    pub fn apply_gradient(&mut self, grad_outputs: &[Vec<f64>], inputs: &[Vec<f64>], lr: f64) {
        if !self.enabled || lr == 0.0 {
            return;
        }
        let grad = self.weight_gradient(grad_outputs, inputs);
        self.weight.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g);
    }

    /// Writes `<stem>.json` and a row-major little-endian f32 `<stem>.bin`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let header = AdapterHeader { dim: self.dim, scale: self.scale, enabled: self.enabled };
        let json_path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
        let bytes: Vec<u8> = self.weight.iter().flat_map(|&w| (w as f32).to_le_bytes()).collect();
        let bin_path = dir.join(format!("{stem}.bin"));
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: AdapterHeader =
            serde_json::from_str(&text).map_err(|source| Error::Manifest { path: json_path.clone(), source })?;
        let bin_path = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let expected = header.dim * header.dim * 4;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch { what: format!("{stem}.bin bytes"), expected, actual: bytes.len() });
        }
        let weight = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok(Self { dim: header.dim, weight, enabled: header.enabled, scale: header.scale })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterHeader {
    dim: usize,
    scale: f64,
    enabled: bool,
}
