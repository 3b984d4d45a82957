//! Calibration modes, loss-term ablations and the three hyperparameter
//! profiles on one synthetic sequence. The synthetic prompts are unit-norm,
//! so the two shift modes coincide here.
//!
//! ```bash
//! cargo run --release --example ablations
//! ```

use desclip::bundle::{synth_bundle, SynthSpec};
use desclip::calibrate::CalibrationMode;
use desclip::eval::compute_report;
use desclip::trainer::{train_sequence, Profile, RunConfig};

fn report(name: &str, bundle: &desclip::EmbeddingBundle, config: &RunConfig) -> desclip::Result<()> {
    let out = train_sequence(bundle, config)?;
    let r = compute_report(&out.checkpoints, bundle, config)?;
    println!("{name:<30} Last {:6.2}  Avg {:6.2}  C. {:6.2}", r.last, r.avg, r.control.unwrap_or(f64::NAN));
    Ok(())
}

fn main() -> desclip::Result<()> {
    let bundle = synth_bundle(&SynthSpec { seed: 2, ..SynthSpec::default() })?;
    let base = RunConfig { lr_adapter: 1e-2, ..RunConfig::default() };

    for mode in [CalibrationMode::ShiftOnNormalized, CalibrationMode::ShiftOnRaw, CalibrationMode::Raw] {
        report(&format!("calibration {mode:?}"), &bundle, &RunConfig { calibration_mode: mode, ..base.clone() })?;
    }
    report("without IM", &bundle, &RunConfig { lambda_im: 0.0, ..base.clone() })?;
    report("without TA", &bundle, &RunConfig { lambda_ta: 0.0, ..base.clone() })?;
    report("without adapter", &bundle, &RunConfig { adapter_enabled: false, ..base.clone() })?;
    report("any candidate (no noun check)", &bundle, &RunConfig { require_cls_noun: false, ..base.clone() })?;
    for profile in [Profile::Coarse, Profile::Fine, Profile::FineGrained] {
        let mut config = base.clone();
        profile.apply(&mut config);
        report(&format!("profile {profile}"), &bundle, &config)?;
    }
    Ok(())
}
