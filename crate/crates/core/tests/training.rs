use desclip::adapter::AdapterState;
use desclip::bundle::{synth_bundle, Split, SynthSpec};
use desclip::calibrate::{ShiftBank, ShiftStatus};
use desclip::eval::{compute_report, seen_accuracy};
use desclip::filter::filter_batch;
use desclip::linalg::to_f64;
use desclip::objective::{total_loss, StepInput};
use desclip::trainer::{load_run, save_checkpoint, train_sequence, train_task, RunConfig};
use desclip::Error;

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_tasks: 3,
        classes_per_task: 3,
        dim: 16,
        samples_per_class: 16,
        test_per_class: 12,
        candidates_per_class: 6,
        control_classes: 3,
        control_per_class: 5,
        seed,
        ..SynthSpec::default()
    }
}

fn quick() -> RunConfig {
    RunConfig { epochs: 3, batch_size: 8, lr_adapter: 1e-2, ..RunConfig::default() }
}

#[test]
fn training_is_deterministic() {
    let bundle = synth_bundle(&spec(1)).unwrap();
    let a = train_sequence(&bundle, &quick()).unwrap();
    let b = train_sequence(&bundle, &quick()).unwrap();
    assert_eq!(a, b);
    let other = train_sequence(&bundle, &RunConfig { seed: 9, ..quick() }).unwrap();
    assert_ne!(a.checkpoints.last().unwrap().bank, other.checkpoints.last().unwrap().bank);
}

#[test]
fn task_order_changes_the_result() {
    let bundle = synth_bundle(&spec(2)).unwrap();
    let reversed = bundle.with_task_order(&[2, 1, 0]).unwrap();
    let a = train_sequence(&bundle, &quick()).unwrap();
    let b = train_sequence(&reversed, &quick()).unwrap();
    assert_ne!(a.checkpoints[0].bank, b.checkpoints[0].bank);
    // the reversed run learned the last group first
    let first = &b.checkpoints[0].bank;
    assert!(bundle.tasks[2].iter().all(|&c| first.entry(c).is_some()));
    assert!(bundle.tasks[0].iter().all(|&c| first.entry(c).is_none()));
}

#[test]
fn earlier_shifts_are_frozen_snapshots() {
    let bundle = synth_bundle(&spec(3)).unwrap();
    let out = train_sequence(&bundle, &quick()).unwrap();
    let after_first = &out.checkpoints[0].bank;
    for ckpt in &out.checkpoints[1..] {
        for &c in &bundle.tasks[0] {
            let e = ckpt.bank.entry(c).unwrap();
            assert_eq!(e.status, ShiftStatus::Frozen);
            assert_eq!(e.shift, after_first.entry(c).unwrap().shift);
        }
    }
    assert_eq!(out.checkpoints[2].bank.learnable_classes(), bundle.tasks[2]);
}

#[test]
fn single_small_step_descends() {
    let bundle = synth_bundle(&spec(4)).unwrap();
    let config = RunConfig { lr_adapter: 1e-3, ..RunConfig::default() };
    let mut adapter = AdapterState::new(bundle.dim, 1.0, true);
    let mut bank = ShiftBank::new(bundle.dim, config.alpha, config.calibration_mode);
    bank.begin_task(0, &bundle.tasks[0]).unwrap();

    let samples = bundle.task_samples(Split::Train, 0);
    let inputs: Vec<Vec<f64>> = samples.iter().take(12).map(|s| to_f64(&s.embedding)).collect();
    let labels: Vec<usize> = samples.iter().take(12).map(|s| s.label).collect();
    let step = StepInput::new(inputs.clone(), labels.clone(), &adapter).unwrap();
    let evidence = filter_batch(&step.adapted, &labels, &bundle, 0, &config.filter()).unwrap();
    assert!(!evidence.valid.is_empty());
    let grads = total_loss(&step, &evidence, &bank, &adapter, &bundle, 0, &config.objective()).unwrap();
    let before = grads.breakdown.total;

    bank.apply_gradient(&grads.shifts, 1e-3);
    adapter.apply_gradient(&grads.features, &inputs, 1e-3);
    let step = StepInput::new(inputs, labels, &adapter).unwrap();
    let after = total_loss(&step, &evidence, &bank, &adapter, &bundle, 0, &config.objective()).unwrap();
    assert!(after.breakdown.total < before, "{} !< {before}", after.breakdown.total);
}

#[test]
fn training_beats_zero_shot_on_seen_classes() {
    let bundle = synth_bundle(&spec(5)).unwrap();
    let config = RunConfig::default();
    let out = train_sequence(&bundle, &config).unwrap();
    let report = compute_report(&out.checkpoints, &bundle, &config).unwrap();
    assert!(report.last > report.zero_shot_last, "{} vs {}", report.last, report.zero_shot_last);
    assert_eq!(report.per_task_curve, out.curve);
}

#[test]
fn few_shot_uses_k_samples_per_class() {
    let bundle = synth_bundle(&spec(6)).unwrap();
    let config = RunConfig { few_shot_k: Some(2), ..quick() };
    let out = train_sequence(&bundle, &config).unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    // same seed, same subset: repeatable
    assert_eq!(out, train_sequence(&bundle, &config).unwrap());
    let full = train_sequence(&bundle, &quick()).unwrap();
    assert_ne!(out.checkpoints[0].bank, full.checkpoints[0].bank);
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let bundle = synth_bundle(&spec(7)).unwrap();
    let config = quick();
    let out = train_sequence(&bundle, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for c in &out.checkpoints {
        save_checkpoint(dir.path(), c).unwrap();
    }
    let loaded = load_run(dir.path()).unwrap();
    assert_eq!(loaded.len(), out.checkpoints.len());
    // stored as f32: evaluation agrees to within rounding
    for (t, (a, b)) in loaded.iter().zip(&out.checkpoints).enumerate() {
        let x = seen_accuracy(&bundle, t, &a.adapter, &a.bank, config.tau).unwrap().micro();
        let y = seen_accuracy(&bundle, t, &b.adapter, &b.bank, config.tau).unwrap().micro();
        assert!((x - y).abs() < 1.0, "task {t}: {x} vs {y}");
        assert_eq!(a.trace.len(), b.trace.len());
    }
}

#[test]
fn train_task_rejects_unknown_task() {
    let bundle = synth_bundle(&spec(8)).unwrap();
    let bank = ShiftBank::new(bundle.dim, 0.1, Default::default());
    let err = train_task(&bundle, 7, &AdapterState::identity(bundle.dim), &bank, &quick()).unwrap_err();
    assert!(matches!(err, Error::TaskOutOfRange { task: 7, count: 3 }));
}
