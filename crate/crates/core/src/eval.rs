//! Inference over calibrated class embeddings and class-incremental metrics.
//!
//! Description candidates are never read here; prediction uses only the
//! adapted visual feature and the calibrated prompt embeddings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterState;
use crate::bundle::{EmbeddingBundle, Sample, Split};
use crate::calibrate::ShiftBank;
use crate::linalg::{cosine, normalized, softmax, to_f64};
use crate::trainer::{RunConfig, TaskCheckpoint};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Probabilities aligned with the calibrated set.
    pub probabilities: Vec<f64>,
}

/// Softmax over `cos(adapt(z), w′_k)/τ`; ties go to the lowest class index.
pub fn predict(
    z: &[f64],
    calibrated_set: &[(usize, Vec<f64>)],
    tau: f64,
    adapter: &AdapterState,
) -> Result<Prediction> {
    if calibrated_set.is_empty() {
        return Err(Error::Empty("calibrated set"));
    }
    let feature = adapter.adapt(z)?;
    let logits = calibrated_set
        .iter()
        .map(|(_, w)| cosine(&feature, w).map(|c| c / tau))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, l) in logits.iter().enumerate().skip(1) {
        let (cur, cand) = (calibrated_set[best].0, calibrated_set[k].0);
        if *l > logits[best] || (*l == logits[best] && cand < cur) {
            best = k;
        }
    }
    Ok(Prediction { class: calibrated_set[best].0, probabilities: softmax(&logits) })
}

/// Correct/total counts, overall and per class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub per_class: BTreeMap<usize, (usize, usize)>,
}

impl Tally {
    /// Sample-averaged accuracy in percent.
    pub fn micro(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * self.correct as f64 / self.total as f64
    }

    /// Class-averaged accuracy in percent.
    pub fn macro_avg(&self) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.per_class.values().map(|&(c, t)| 100.0 * c as f64 / t as f64).sum();
        sum / self.per_class.len() as f64
    }

    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        self.per_class.get(&class).map(|&(c, t)| 100.0 * c as f64 / t as f64)
    }
}

pub fn tally<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
    calibrated_set: &[(usize, Vec<f64>)],
    tau: f64,
    adapter: &AdapterState,
) -> Result<Tally> {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    let predicted = samples
        .par_iter()
        .map(|s| predict(&to_f64(&s.embedding), calibrated_set, tau, adapter).map(|p| p.class))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Tally::default();
    for (s, p) in samples.iter().zip(predicted) {
        let entry = t.per_class.entry(s.label).or_insert((0, 0));
        entry.1 += 1;
        t.total += 1;
        if p == s.label {
            entry.0 += 1;
            t.correct += 1;
        }
    }
    Ok(t)
}

/// Accuracy in percent of argmax predictions over `samples`.
pub fn evaluate_split(
    samples: &[Sample],
    calibrated_set: &[(usize, Vec<f64>)],
    tau: f64,
    adapter: &AdapterState,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    Ok(tally(samples, calibrated_set, tau, adapter)?.micro())
}

/// Test-split tally over all classes of tasks `0..=task`.
pub fn seen_accuracy(
    bundle: &EmbeddingBundle,
    task: usize,
    adapter: &AdapterState,
    bank: &ShiftBank,
    tau: f64,
) -> Result<Tally> {
    let set = bank.calibrated_set(bundle, task)?;
    let seen = bundle.classes_through(task);
    let samples = bundle.test.iter().filter(|s| seen.binary_search(&s.label).is_ok());
    tally(samples, &set, tau, adapter)
}

/// The untrained model: identity adapter and zero shifts for every task.
pub fn zero_shot_state(bundle: &EmbeddingBundle, config: &RunConfig) -> Result<(AdapterState, ShiftBank)> {
    let mut bank = ShiftBank::new(bundle.dim, config.alpha, config.calibration_mode);
    for (t, group) in bundle.tasks.iter().enumerate() {
        bank.begin_task(t, group)?;
    }
    Ok((AdapterState::identity(bundle.dim), bank))
}

/// Control-set accuracy against the untouched control-class prompts.
pub fn control_accuracy(bundle: &EmbeddingBundle, adapter: &AdapterState, tau: f64) -> Result<Option<f64>> {
    if bundle.control.is_empty() {
        return Ok(None);
    }
    let set = bundle
        .control_classes
        .iter()
        .enumerate()
        .map(|(k, c)| Ok((k, normalized(&to_f64(&c.rudimentary_embedding), "control prompt")?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_split(bundle.samples(Split::Control), &set, tau, adapter).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: usize,
    pub name: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `"micro"`: headline accuracies average over samples.
    pub accuracy_basis: String,
    pub last: f64,
    pub avg: f64,
    pub last_macro: f64,
    pub avg_macro: f64,
    pub control: Option<f64>,
    pub control_zero_shot: Option<f64>,
    pub per_task_curve: Vec<f64>,
    pub per_task_curve_macro: Vec<f64>,
    pub zero_shot_curve: Vec<f64>,
    pub zero_shot_last: f64,
    /// Number of tasks counted as the first half for the delta metrics.
    pub half_tasks: usize,
    /// Per first-half class: accuracy after the half point minus zero-shot.
    pub delta_zero_shot: Option<Vec<ClassDelta>>,
    pub delta_zero_shot_mean: Option<f64>,
    /// Per first-half class: accuracy after the last task minus after the half point.
    pub delta_transfer: Option<Vec<ClassDelta>>,
    pub delta_transfer_mean: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn class_deltas(bundle: &EmbeddingBundle, classes: &[usize], after: &Tally, before: &Tally) -> Vec<ClassDelta> {
    classes
        .iter()
        .filter_map(|&c| {
            let delta = after.class_accuracy(c)? - before.class_accuracy(c)?;
            Some(ClassDelta { class: c, name: bundle.classes[c].name.clone(), delta })
        })
        .collect()
}

/// Computes every reported metric from the per-task checkpoints.
///
/// With fewer checkpoints than tasks, the curve covers the available tasks
/// and delta metrics needing a missing checkpoint are omitted.
pub fn compute_report(checkpoints: &[TaskCheckpoint], bundle: &EmbeddingBundle, config: &RunConfig) -> Result<MetricsReport> {
    if checkpoints.is_empty() {
        return Err(Error::Empty("checkpoint list"));
    }
    let tau = config.tau;
    let tallies = checkpoints
        .iter()
        .enumerate()
        .map(|(t, c)| seen_accuracy(bundle, t, &c.adapter, &c.bank, tau))
        .collect::<Result<Vec<_>>>()?;
    let curve: Vec<f64> = tallies.iter().map(Tally::micro).collect();
    let curve_macro: Vec<f64> = tallies.iter().map(Tally::macro_avg).collect();

    let (zs_adapter, zs_bank) = zero_shot_state(bundle, config)?;
    let zs_tallies = (0..checkpoints.len())
        .map(|t| seen_accuracy(bundle, t, &zs_adapter, &zs_bank, tau))
        .collect::<Result<Vec<_>>>()?;
    let zero_shot_curve: Vec<f64> = zs_tallies.iter().map(Tally::micro).collect();

    let final_ckpt = checkpoints.last().expect("non-empty");
    let num_tasks = bundle.num_tasks();
    let half_tasks = num_tasks.div_ceil(2);

    let (mut delta_zero_shot, mut delta_transfer) = (None, None);
    if checkpoints.len() >= half_tasks && half_tasks > 0 {
        let h = half_tasks - 1;
        let first_half = bundle.classes_through(h);
        delta_zero_shot = Some(class_deltas(bundle, &first_half, &tallies[h], &zs_tallies[h]));
        if checkpoints.len() == num_tasks {
            let last = &tallies[num_tasks - 1];
            delta_transfer = Some(class_deltas(bundle, &first_half, last, &tallies[h]));
        } else {
            log::warn!("only {} of {num_tasks} checkpoints: transfer delta omitted", checkpoints.len());
        }
    } else {
        log::warn!("half-sequence checkpoint missing: delta metrics omitted");
    }
    let mean_delta = |d: &Option<Vec<ClassDelta>>| {
        d.as_ref().map(|v| mean(&v.iter().map(|x| x.delta).collect::<Vec<_>>()))
    };

    Ok(MetricsReport {
        accuracy_basis: "micro".into(),
        last: *curve.last().expect("non-empty"),
        avg: mean(&curve),
        last_macro: *curve_macro.last().expect("non-empty"),
        avg_macro: mean(&curve_macro),
        control: control_accuracy(bundle, &final_ckpt.adapter, tau)?,
        control_zero_shot: control_accuracy(bundle, &zs_adapter, tau)?,
        zero_shot_last: *zero_shot_curve.last().expect("non-empty"),
        per_task_curve: curve,
        per_task_curve_macro: curve_macro,
        zero_shot_curve,
        half_tasks,
        delta_zero_shot_mean: mean_delta(&delta_zero_shot),
        delta_zero_shot,
        delta_transfer_mean: mean_delta(&delta_transfer),
        delta_transfer,
    })
}

impl MetricsReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("task,accuracy\n");
        for (t, a) in self.per_task_curve.iter().enumerate() {
            let _ = writeln!(out, "{},{}", t + 1, a);
        }
        out
    }

    /// Writes `report.json` and `curve.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join("curve.csv");
        fs::write(&path, self.curve_csv()).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Manifest { path, source })
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Last  {:6.2}  (zero-shot {:6.2}, macro {:6.2})", self.last, self.zero_shot_last, self.last_macro);
        let _ = writeln!(s, "Avg   {:6.2}  (macro {:6.2})", self.avg, self.avg_macro);
        if let (Some(c), Some(z)) = (self.control, self.control_zero_shot) {
            let _ = writeln!(s, "C.    {c:6.2}  (zero-shot {z:6.2})");
        }
        let curve: Vec<String> = self.per_task_curve.iter().map(|a| format!("{a:.1}")).collect();
        let _ = writeln!(s, "curve [{}]", curve.join(", "));
        if let Some(d) = self.delta_zero_shot_mean {
            let _ = writeln!(s, "mean Δ vs zero-shot after {} task(s): {d:+.2}", self.half_tasks);
        }
        if let Some(d) = self.delta_transfer_mean {
            let _ = writeln!(s, "mean Δ final vs half on first-half classes: {d:+.2}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{synth_bundle, SynthSpec};

    fn set() -> Vec<(usize, Vec<f64>)> {
        vec![(0, vec![1.0, 0.0, 0.0]), (1, vec![0.0, 1.0, 0.0]), (2, vec![0.0, 0.0, 1.0])]
    }

    #[test]
    fn predict_basics() {
        let id = AdapterState::identity(3);
        let p = predict(&[0.0, 2.0, 0.0], &set(), 0.01, &id).unwrap();
        assert_eq!(p.class, 1);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let scaled = predict(&[0.0, 200.0, 0.0], &set(), 0.01, &id).unwrap();
        assert_eq!(scaled.class, 1);
        assert!(predict(&[1.0, 0.0, 0.0], &[], 0.01, &id).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let id = AdapterState::identity(2);
        let s = vec![(4, vec![1.0, 1.0]), (2, vec![1.0, 1.0])];
        assert_eq!(predict(&[1.0, 0.0], &s, 0.1, &id).unwrap().class, 2);
    }

    #[test]
    fn split_accuracy() {
        let id = AdapterState::identity(3);
        let samples: Vec<Sample> = [(0, 0), (1, 1), (2, 2), (0, 1)]
            .iter()
            .map(|&(axis, label)| {
                let mut e = vec![0.0f32; 3];
                e[axis] = 1.0;
                Sample { embedding: e, label }
            })
            .collect();
        assert_eq!(evaluate_split(&samples[..3], &set(), 0.01, &id).unwrap(), 100.0);
        assert_eq!(evaluate_split(&samples, &set(), 0.01, &id).unwrap(), 75.0);
        assert!(evaluate_split(&[], &set(), 0.01, &id).is_err());
    }

    #[test]
    fn report_identities() {
        let spec = SynthSpec { num_tasks: 3, classes_per_task: 2, dim: 8, seed: 2, ..SynthSpec::default() };
        let b = synth_bundle(&spec).unwrap();
        let config = RunConfig::default();
        let (adapter, full_bank) = zero_shot_state(&b, &config).unwrap();
        let ckpts: Vec<TaskCheckpoint> = (0..3)
            .map(|t| {
                let mut bank = ShiftBank::new(b.dim, config.alpha, config.calibration_mode);
                for u in 0..=t {
                    bank.begin_task(u, &b.tasks[u]).unwrap();
                }
                TaskCheckpoint { task: t, adapter: adapter.clone(), bank, trace: vec![] }
            })
            .collect();
        let r = compute_report(&ckpts, &b, &config).unwrap();
        assert!((r.avg - mean(&r.per_task_curve)).abs() < 1e-9);
        assert_eq!(r.per_task_curve, r.zero_shot_curve);
        assert_eq!(r.half_tasks, 2);
        assert!(r.delta_zero_shot.as_ref().unwrap().iter().all(|d| d.delta == 0.0));
        assert_eq!(r.delta_zero_shot.as_ref().unwrap().len(), 4);
        assert_eq!(r.control, r.control_zero_shot);
        assert!(full_bank.is_registered(2));

        let partial = compute_report(&ckpts[..1], &b, &config).unwrap();
        assert!(partial.delta_zero_shot.is_none());
        assert!(partial.delta_transfer.is_none());
    }

    #[test]
    fn avg_of_two_point_curve() {
        assert_eq!(mean(&[90.0, 80.0]), 85.0);
    }
}
