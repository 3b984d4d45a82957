//! Zero-shot vs. shift calibration only vs. the full objective on the default
//! synthetic sequence (5 tasks of 4 classes, 32-dim).
//!
//! ```bash
//! cargo run --release --example synthetic_benchmark -- [seed]
//! ```

use desclip::bundle::{synth_bundle, SynthSpec};
use desclip::eval::compute_report;
use desclip::trainer::{train_sequence, RunConfig};

fn main() -> desclip::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let bundle = synth_bundle(&SynthSpec { seed, ..SynthSpec::default() })?;

    let variants = [
        ("full", RunConfig { seed, ..RunConfig::default() }),
        ("full, lr_adapter 1e-2", RunConfig { seed, lr_adapter: 1e-2, ..RunConfig::default() }),
        ("shift calibration only", RunConfig { seed, adapter_enabled: false, lambda_im: 0.0, ..RunConfig::default() }),
    ];

    println!("{:<24} {:>7} {:>7} {:>7}  curve", "variant", "Last", "Avg", "C.");
    let mut zero_shot = None;
    for (name, config) in &variants {
        let out = train_sequence(&bundle, config)?;
        let r = compute_report(&out.checkpoints, &bundle, config)?;
        zero_shot.get_or_insert((r.zero_shot_last, r.zero_shot_curve.clone(), r.control_zero_shot));
        let curve: Vec<String> = r.per_task_curve.iter().map(|a| format!("{a:.1}")).collect();
        println!(
            "{:<24} {:>7.2} {:>7.2} {:>7.2}  {}",
            name,
            r.last,
            r.avg,
            r.control.unwrap_or(f64::NAN),
            curve.join(" ")
        );
    }
    let (last, curve, control) = zero_shot.expect("at least one variant");
    let avg = curve.iter().sum::<f64>() / curve.len() as f64;
    let curve: Vec<String> = curve.iter().map(|a| format!("{a:.1}")).collect();
    println!("{:<24} {:>7.2} {:>7.2} {:>7.2}  {}", "zero-shot", last, avg, control.unwrap_or(f64::NAN), curve.join(" "));
    Ok(())
}
