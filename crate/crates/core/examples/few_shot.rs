//! Accuracy as a function of the number of training samples per class.
//!
//! ```bash
//! cargo run --release --example few_shot
//! ```

use desclip::bundle::{synth_bundle, SynthSpec};
use desclip::eval::compute_report;
use desclip::trainer::{train_sequence, RunConfig};

fn main() -> desclip::Result<()> {
    let bundle = synth_bundle(&SynthSpec::default())?;
    println!("{:>6} {:>7} {:>7}", "k", "Last", "Avg");
    for k in [Some(1), Some(2), Some(4), Some(8), Some(16), None] {
        let config = RunConfig { few_shot_k: k, ..RunConfig::default() };
        let out = train_sequence(&bundle, &config)?;
        let r = compute_report(&out.checkpoints, &bundle, &config)?;
        let label = k.map_or("all".to_string(), |k| k.to_string());
        println!("{label:>6} {:>7.2} {:>7.2}   (zero-shot {:.2})", r.last, r.avg, r.zero_shot_last);
    }
    Ok(())
}
