//! Writes a small bundle to disk, prints its manifest and loads it back.
//! This is the format an external feature extractor produces.
//!
//! ```bash
//! cargo run --example bundle_files -- [output dir]
//! ```

use std::path::PathBuf;

use desclip::bundle::{load_bundle, save_bundle, synth_bundle, SynthSpec, MANIFEST_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("desclip-bundle-example"));
    let spec = SynthSpec {
        num_tasks: 2,
        classes_per_task: 2,
        dim: 4,
        samples_per_class: 3,
        test_per_class: 2,
        candidates_per_class: 2,
        control_classes: 1,
        control_per_class: 2,
        ..SynthSpec::default()
    };
    let bundle = synth_bundle(&spec)?;
    save_bundle(&bundle, &dir)?;

    let manifest = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    println!("{manifest}");
    let mut files: Vec<_> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.metadata().map(|m| m.len()).unwrap_or(0)))
        .collect();
    files.sort();
    for (name, len) in files {
        println!("{name:<24} {len:>6} bytes");
    }

    let back = load_bundle(&dir)?;
    assert_eq!(back, bundle);
    println!("reloaded {} classes from {}", back.classes.len(), dir.display());
    Ok(())
}
