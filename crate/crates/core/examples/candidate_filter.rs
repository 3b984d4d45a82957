//! Anchor-based filtering of description candidates for one sample.
//!
//! ```bash
//! cargo run --example candidate_filter
//! ```

use desclip::bundle::{ClassRecord, DescriptionCandidate};
use desclip::filter::{filter_sample, FilterParams};

fn candidate(text: &str, embedding: [f32; 3], cls_noun: bool) -> DescriptionCandidate {
    DescriptionCandidate { text: text.into(), embedding: embedding.to_vec(), cls_noun }
}

fn main() -> desclip::Result<()> {
    let class = ClassRecord {
        name: "kingfisher".into(),
        rudimentary_embedding: vec![1.0, 0.0, 0.0],
        candidates: vec![
            candidate("a kingfisher with a long dagger-like bill", [0.9, 0.5, 0.0], true),
            candidate("a kingfisher with bright blue plumage", [0.8, 0.1, 0.6], true),
            candidate("a bird perched on a branch", [0.6, 0.8, 0.0], false),
            candidate("a kingfisher photographed at night", [0.2, -0.9, 0.3], true),
        ],
    };
    let z = [0.7, 0.6, 0.1];

    for params in [
        FilterParams::default(),
        FilterParams { require_cls_noun: false, ..FilterParams::default() },
        FilterParams { gamma: 0.2, ..FilterParams::default() },
        FilterParams { delta_d: 0.99, ..FilterParams::default() },
    ] {
        let ev = filter_sample(&z, &class, &params)?;
        println!(
            "delta_d {:.2} gamma {:.3} noun-only {:<5} | chi {:<5} anchor {:>6.3}",
            params.delta_d,
            params.gamma,
            params.require_cls_noun,
            ev.chi,
            ev.cs
        );
        for &(j, score) in &ev.kept {
            let mark = if Some(j) == ev.paired_index { "*" } else { " " };
            println!("   {mark} {score:.3}  {}", class.candidates[j].text);
        }
        if !ev.is_valid() {
            println!("     (sample contributes to the classification term only)");
        }
    }
    Ok(())
}
