//! Per-class shift weights that calibrate prompt embeddings.
//!
//! The calibrated embedding of class `k` is `w_k/‖w_k‖ + α·s_k`. Shifts are
//! created zeroed and learnable when their task begins, and become frozen as
//! soon as the next task is registered.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::EmbeddingBundle;
use crate::linalg::{normalized, to_f64};
use crate::{Error, Result};

/// How prompt embeddings are turned into classifier weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Prompt embedding as is; shifts are ignored and receive no gradient.
    Raw,
    /// `w + α·s`
    ShiftOnRaw,
    /// `w/‖w‖ + α·s`
    #[default]
    ShiftOnNormalized,
}

impl CalibrationMode {
    /// `∂w′/∂s` is this scalar times the identity.
    pub fn shift_scale(self, alpha: f64) -> f64 {
        match self {
            CalibrationMode::Raw => 0.0,
            _ => alpha,
        }
    }
}

/// `w/‖w‖ + α·s`.
pub fn calibrate_embedding(w: &[f64], s: &[f64], alpha: f64) -> Result<Vec<f64>> {
    calibrate_with_mode(w, s, alpha, CalibrationMode::ShiftOnNormalized)
}

pub fn calibrate_with_mode(w: &[f64], s: &[f64], alpha: f64, mode: CalibrationMode) -> Result<Vec<f64>> {
    if w.len() != s.len() {
        return Err(Error::DimensionMismatch { what: "shift weight".into(), expected: w.len(), actual: s.len() });
    }
    let base = match mode {
        CalibrationMode::ShiftOnNormalized => normalized(w, "prompt embedding")?,
        _ => w.to_vec(),
    };
    if mode == CalibrationMode::Raw {
        return Ok(base);
    }
    Ok(base.iter().zip(s).map(|(b, x)| b + alpha * x).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftStatus {
    Learnable,
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEntry {
    pub task: usize,
    pub status: ShiftStatus,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftBank {
    pub dim: usize,
    pub alpha: f64,
    pub mode: CalibrationMode,
    entries: BTreeMap<usize, ShiftEntry>,
    tasks: BTreeSet<usize>,
}

impl ShiftBank {
    pub fn new(dim: usize, alpha: f64, mode: CalibrationMode) -> Self {
        Self { dim, alpha, mode, entries: BTreeMap::new(), tasks: BTreeSet::new() }
    }

    /// Registers the classes of `task` with zero learnable shifts and freezes
    /// every previously registered shift.
    pub fn begin_task(&mut self, task: usize, classes: &[usize]) -> Result<()> {
        if let Some(&c) = classes.iter().find(|c| self.entries.contains_key(c)) {
            return Err(Error::ClassAlreadyRegistered(c));
        }
        let mut unique = BTreeSet::new();
        if let Some(&c) = classes.iter().find(|&&c| !unique.insert(c)) {
            return Err(Error::ClassAlreadyRegistered(c));
        }
        for entry in self.entries.values_mut() {
            entry.status = ShiftStatus::Frozen;
        }
        for &c in classes {
            self.entries.insert(
                c,
                ShiftEntry { task, status: ShiftStatus::Learnable, shift: vec![0.0; self.dim] },
            );
        }
        self.tasks.insert(task);
        Ok(())
    }

    pub fn is_registered(&self, task: usize) -> bool {
        self.tasks.contains(&task)
    }

    pub fn entry(&self, class: usize) -> Option<&ShiftEntry> {
        self.entries.get(&class)
    }

    pub fn shift(&self, class: usize) -> Option<&[f64]> {
        self.entries.get(&class).map(|e| e.shift.as_slice())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &ShiftEntry)> {
        self.entries.iter().map(|(&c, e)| (c, e))
    }

    pub fn learnable_classes(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(_, e)| e.status == ShiftStatus::Learnable)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Calibrated embedding of a registered class.
    pub fn calibrated(&self, bundle: &EmbeddingBundle, class: usize) -> Result<Vec<f64>> {
        let entry = self.entries.get(&class).ok_or(Error::ClassOutOfRange {
            index: class,
            count: bundle.classes.len(),
        })?;
        calibrate_with_mode(
            &to_f64(&bundle.classes[class].rudimentary_embedding),
            &entry.shift,
            self.alpha,
            self.mode,
        )
    }

    /// Calibrated embeddings of every class of tasks `0..=through_task`, in
    /// class-index order.
    pub fn calibrated_set(&self, bundle: &EmbeddingBundle, through_task: usize) -> Result<Vec<(usize, Vec<f64>)>> {
        if through_task >= bundle.tasks.len() {
            return Err(Error::TaskOutOfRange { task: through_task, count: bundle.tasks.len() });
        }
        if let Some(t) = (0..=through_task).find(|t| !self.tasks.contains(t)) {
            return Err(Error::TaskNotRegistered(t));
        }
        bundle
            .classes_through(through_task)
            .into_iter()
            .map(|c| Ok((c, self.calibrated(bundle, c)?)))
            .collect()
    }

    /// Plain gradient step on learnable shifts. Gradients for frozen or
    /// unknown classes are ignored.
    pub fn apply_gradient(&mut self, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) {
        for (class, g) in grads {
            match self.entries.get_mut(class) {
                Some(entry) if entry.status == ShiftStatus::Learnable => {
                    entry.shift.iter_mut().zip(g).for_each(|(s, d)| *s -= lr * d);
                }
                _ => debug_assert!(false, "gradient for non-learnable class {class}"),
            }
        }
    }

    /// Writes `<stem>.json` (header) and `<stem>.bin` (f32 rows) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let header = ShiftHeader {
            class_count: self.entries.len(),
            dim: self.dim,
            alpha: self.alpha,
            mode: self.mode,
            tasks: self.tasks.iter().copied().collect(),
            classes: self
                .entries
                .iter()
                .map(|(&class, e)| ShiftHeaderEntry { class, task: e.task, status: e.status })
                .collect(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
        let bytes: Vec<u8> = self
            .entries
            .values()
            .flat_map(|e| e.shift.iter().flat_map(|&x| (x as f32).to_le_bytes()))
            .collect();
        let bin_path = dir.join(format!("{stem}.bin"));
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: ShiftHeader =
            serde_json::from_str(&text).map_err(|source| Error::Manifest { path: json_path.clone(), source })?;
        if header.class_count != header.classes.len() {
            return Err(Error::DimensionMismatch {
                what: format!("{stem}.json class list"),
                expected: header.class_count,
                actual: header.classes.len(),
            });
        }
        let bin_path = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let expected = header.class_count * header.dim * 4;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch { what: format!("{stem}.bin bytes"), expected, actual: bytes.len() });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let mut bank = ShiftBank::new(header.dim, header.alpha, header.mode);
        bank.tasks = header.tasks.into_iter().collect();
        for (entry, row) in header.classes.into_iter().zip(values.chunks(header.dim.max(1))) {
            bank.entries.insert(
                entry.class,
                ShiftEntry { task: entry.task, status: entry.status, shift: row.to_vec() },
            );
        }
        Ok(bank)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ShiftHeader {
    class_count: usize,
    dim: usize,
    alpha: f64,
    mode: CalibrationMode,
    tasks: Vec<usize>,
    classes: Vec<ShiftHeaderEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShiftHeaderEntry {
    class: usize,
    task: usize,
    status: ShiftStatus,
}
