//! Per-task optimization loop and sequential class-incremental training.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::AdapterState;
use crate::bundle::{subsample_few_shot, EmbeddingBundle, Split};
use crate::calibrate::ShiftBank;
use crate::filter::filter_batch;
use crate::linalg::to_f64;
use crate::objective::{total_loss, LossBreakdown, StepInput};
use crate::{eval, Error, Result};

pub use config::{Profile, RunConfig};

/// Cosine decay from `initial` towards zero over `total_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub initial: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return 0.0;
        }
        let progress = step as f64 / self.total_steps as f64;
        0.5 * self.initial * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Mean loss terms over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub l_im: f64,
    pub l_ta: f64,
    pub l_ric: f64,
    pub total: f64,
}

/// Model state at the end of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCheckpoint {
    pub task: usize,
    pub adapter: AdapterState,
    pub bank: ShiftBank,
    pub trace: Vec<EpochTrace>,
}

fn task_seed(seed: u64, task: usize) -> u64 {
    seed ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains adapter and current-task shifts on task `task`.
///
/// Registers the task's classes in the shift bank if needed (which freezes
/// all earlier shifts), then runs `epochs` passes of seeded mini-batch SGD
/// with independent cosine schedules for the two learning rates.
pub fn train_task(
    bundle: &EmbeddingBundle,
    task: usize,
    adapter: &AdapterState,
    bank: &ShiftBank,
    config: &RunConfig,
) -> Result<TaskCheckpoint> {
    config.validate()?;
    let group = bundle
        .tasks
        .get(task)
        .ok_or(Error::TaskOutOfRange { task, count: bundle.tasks.len() })?;
    let mut adapter = adapter.clone();
    let mut bank = bank.clone();
    if !bank.is_registered(task) {
        bank.begin_task(task, group)?;
    }

    let samples = bundle.task_samples(Split::Train, task);
    if samples.is_empty() {
        return Err(Error::EmptyTaskData(task));
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| to_f64(&s.embedding)).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();

    let batches_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let adapter_lr = CosineSchedule { initial: config.lr_adapter, total_steps };
    let shift_lr = CosineSchedule { initial: config.lr_shift, total_steps };
    let objective = config.objective();
    let filter = config.filter();

    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(config.seed, task));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(config.batch_size) {
            let batch = StepInput::new(
                chunk.iter().map(|&i| inputs[i].clone()).collect(),
                chunk.iter().map(|&i| labels[i]).collect(),
                &adapter,
            )?;
            let evidence = filter_batch(&batch.adapted, &batch.labels, bundle, task, &filter)?;
            let grads = total_loss(&batch, &evidence, &bank, &adapter, bundle, task, &objective)?;

            let b = grads.breakdown;
            sum.l_im += b.l_im;
            sum.l_ta += b.l_ta;
            sum.l_ric += b.l_ric;
            sum.total += b.total;

            bank.apply_gradient(&grads.shifts, shift_lr.lr(step));
            adapter.apply_gradient(&grads.features, &batch.inputs, adapter_lr.lr(step));
            step += 1;
        }
        let n = batches_per_epoch as f64;
        trace.push(EpochTrace {
            epoch,
            l_im: sum.l_im / n,
            l_ta: sum.l_ta / n,
            l_ric: sum.l_ric / n,
            total: sum.total / n,
        });
        log::debug!("task {task} epoch {epoch}: total {:.6}", sum.total / n);
    }
    Ok(TaskCheckpoint { task, adapter, bank, trace })
}

/// Checkpoints of every task plus the accuracy on all seen classes measured
/// after each task.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub checkpoints: Vec<TaskCheckpoint>,
    pub curve: Vec<f64>,
}

/// Trains tasks in bundle order, evaluating on the test split after each.
pub fn train_sequence(bundle: &EmbeddingBundle, config: &RunConfig) -> Result<SequenceOutcome> {
    config.validate()?;
    let subsampled;
    let bundle = match config.few_shot_k {
        Some(k) => {
            subsampled = subsample_few_shot(bundle, k, config.seed)?;
            &subsampled
        }
        None => bundle,
    };
    let mut adapter = AdapterState::new(bundle.dim, config.adapter_scale, config.adapter_enabled);
    let mut bank = ShiftBank::new(bundle.dim, config.alpha, config.calibration_mode);
    let mut checkpoints = Vec::with_capacity(bundle.num_tasks());
    let mut curve = Vec::with_capacity(bundle.num_tasks());
    for task in 0..bundle.num_tasks() {
        let ckpt = train_task(bundle, task, &adapter, &bank, config)?;
        adapter = ckpt.adapter.clone();
        bank = ckpt.bank.clone();
        let acc = eval::seen_accuracy(bundle, task, &adapter, &bank, config.tau)?;
        log::info!("after task {}: {:.2}% on seen classes", task + 1, acc.micro());
        curve.push(acc.micro());
        checkpoints.push(ckpt);
    }
    Ok(SequenceOutcome { checkpoints, curve })
}

/// Directory of task `task` (zero-based) inside a run directory.
pub fn checkpoint_dir(run: &Path, task: usize) -> PathBuf {
    run.join(format!("task_{}", task + 1))
}

pub fn trace_csv(trace: &[EpochTrace]) -> String {
    let mut out = String::from("epoch,l_im,l_ta,l_ric,total\n");
    for t in trace {
        let _ = writeln!(out, "{},{},{},{},{}", t.epoch, t.l_im, t.l_ta, t.l_ric, t.total);
    }
    out
}

fn parse_trace(text: &str) -> Result<Vec<EpochTrace>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::Config(format!("malformed trace line '{line}'"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochTrace {
                epoch: f[0].parse().map_err(|_| bad())?,
                l_im: num(f[1])?,
                l_ta: num(f[2])?,
                l_ric: num(f[3])?,
                total: num(f[4])?,
            })
        })
        .collect()
}

pub fn save_checkpoint(run: &Path, ckpt: &TaskCheckpoint) -> Result<()> {
    let dir = checkpoint_dir(run, ckpt.task);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    ckpt.adapter.save(&dir, "adapter")?;
    ckpt.bank.save(&dir, "shifts")?;
    let path = dir.join("trace.csv");
    fs::write(&path, trace_csv(&ckpt.trace)).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(run: &Path, task: usize) -> Result<TaskCheckpoint> {
    let dir = checkpoint_dir(run, task);
    let path = dir.join("trace.csv");
    let trace = parse_trace(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
    Ok(TaskCheckpoint {
        task,
        adapter: AdapterState::load(&dir, "adapter")?,
        bank: ShiftBank::load(&dir, "shifts")?,
        trace,
    })
}

/// Loads `task_1`, `task_2`, … until the first missing directory.
pub fn load_run(run: &Path) -> Result<Vec<TaskCheckpoint>> {
    let mut out = Vec::new();
    while checkpoint_dir(run, out.len()).is_dir() {
        out.push(load_checkpoint(run, out.len())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{synth_bundle, SynthSpec};

    fn spec() -> SynthSpec {
        SynthSpec {
            num_tasks: 2,
            classes_per_task: 3,
            dim: 8,
            samples_per_class: 12,
            test_per_class: 6,
            candidates_per_class: 5,
            control_classes: 0,
            seed: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let s = CosineSchedule { initial: 0.1, total_steps: 4 };
        assert_eq!(s.lr(0), 0.1);
        assert!((s.lr(2) - 0.05).abs() < 1e-15);
        assert!(s.lr(3) > 0.0 && s.lr(3) < s.lr(2));
        assert_eq!(s.lr(4), 0.0);
    }

    #[test]
    fn zero_epochs_returns_inputs() {
        let b = synth_bundle(&spec()).unwrap();
        let config = RunConfig { epochs: 0, ..RunConfig::default() };
        let adapter = AdapterState::new(b.dim, 1.0, true);
        let mut bank = ShiftBank::new(b.dim, config.alpha, config.calibration_mode);
        bank.begin_task(0, &b.tasks[0]).unwrap();
        let ckpt = train_task(&b, 0, &adapter, &bank, &config).unwrap();
        assert_eq!(ckpt.adapter, adapter);
        assert_eq!(ckpt.bank, bank);
        assert!(ckpt.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_moves_learnable_state() {
        let b = synth_bundle(&spec()).unwrap();
        let config = RunConfig { epochs: 2, batch_size: 8, lr_adapter: 1e-2, ..RunConfig::default() };
        let a = train_sequence(&b, &config).unwrap();
        let again = train_sequence(&b, &config).unwrap();
        assert_eq!(a, again);
        assert_eq!(a.checkpoints.len(), 2);
        assert!(a.checkpoints.iter().all(|c| c.trace.len() == 2));
        assert!(a.checkpoints[0].bank.shift(0).unwrap().iter().any(|&x| x != 0.0));
        assert!(a.checkpoints[1].adapter.weight.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn checkpoint_files_round_trip() {
        let b = synth_bundle(&spec()).unwrap();
        let config = RunConfig { epochs: 1, ..RunConfig::default() };
        let out = train_sequence(&b, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for c in &out.checkpoints {
            save_checkpoint(dir.path(), c).unwrap();
        }
        let loaded = load_run(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[1].trace, out.checkpoints[1].trace);
        assert_eq!(loaded[1].bank.learnable_classes(), vec![3, 4, 5]);
    }

    #[test]
    fn unknown_task_is_an_error() {
        let b = synth_bundle(&spec()).unwrap();
        let config = RunConfig::default();
        let bank = ShiftBank::new(b.dim, 0.1, config.calibration_mode);
        let err = train_task(&b, 5, &AdapterState::identity(b.dim), &bank, &config).unwrap_err();
        assert!(matches!(err, Error::TaskOutOfRange { .. }));
    }
}
