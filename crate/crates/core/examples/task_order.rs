//! Familiar-first vs. unfamiliar-first task orders. The synthetic prompts
//! drift further from their class clusters in later tasks, so reversing the
//! sequence puts the hardest classes first.
//!
//! ```bash
//! cargo run --release --example task_order
//! ```

use desclip::bundle::{synth_bundle_with_truth, SynthSpec};
use desclip::eval::compute_report;
use desclip::trainer::{train_sequence, RunConfig};

fn main() -> desclip::Result<()> {
    let spec = SynthSpec { unfamiliarity_skew: 0.3, ..SynthSpec::default() };
    let (bundle, truth) = synth_bundle_with_truth(&spec)?;
    let per_task: Vec<String> = bundle
        .tasks
        .iter()
        .map(|g| format!("{:.2}", g.iter().map(|&c| truth.unfamiliarity[c]).sum::<f64>() / g.len() as f64))
        .collect();
    println!("prompt unfamiliarity per task: {}", per_task.join(" "));

    let order: Vec<usize> = (0..bundle.num_tasks()).rev().collect();
    let reversed = bundle.with_task_order(&order)?;
    let config = RunConfig::default();
    for (name, b) in [("familiar first", &bundle), ("unfamiliar first", &reversed)] {
        let out = train_sequence(b, &config)?;
        let r = compute_report(&out.checkpoints, b, &config)?;
        let curve: Vec<String> = r.per_task_curve.iter().map(|a| format!("{a:.1}")).collect();
        println!(
            "{name:<17} Last {:.2}  Avg {:.2}  dZS {:+.2}  dT {:+.2}  curve {}",
            r.last,
            r.avg,
            r.delta_zero_shot_mean.unwrap_or(f64::NAN),
            r.delta_transfer_mean.unwrap_or(f64::NAN),
            curve.join(" ")
        );
    }
    Ok(())
}
