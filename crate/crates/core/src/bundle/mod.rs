//! Embedding bundles: visual features, class-text embeddings, description
//! candidates and the task partition of a class-incremental benchmark.

mod io;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::MIN_NORM;
use crate::{Error, Result};

pub use io::{load_bundle, save_bundle, MANIFEST_FILE};
pub use synth::{synth_bundle, synth_bundle_with_truth, SynthSpec, SynthTruth};

/// A visual embedding with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub embedding: Vec<f32>,
    pub label: usize,
}

/// One general-attribute description and its text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionCandidate {
    pub text: String,
    pub embedding: Vec<f32>,
    /// The sentence names the class as a noun.
    pub cls_noun: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecord {
    pub name: String,
    /// Embedding of the hand-crafted "A photo of a [CLS]" prompt.
    pub rudimentary_embedding: Vec<f32>,
    pub candidates: Vec<DescriptionCandidate>,
}

/// A class of the control set. Control classes never take part in training
/// and are scored against their untouched prompt embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlClass {
    pub name: String,
    pub rudimentary_embedding: Vec<f32>,
}

/// Immutable store for everything a continual run reads.
///
/// `tasks` partitions the class indices into disjoint, non-empty groups.
/// Sample labels index `classes`, except control samples, whose labels index
/// `control_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub dim: usize,
    pub classes: Vec<ClassRecord>,
    pub tasks: Vec<Vec<usize>>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub control: Vec<Sample>,
    pub control_classes: Vec<ControlClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Control,
}

fn check_vector(v: &[f32], dim: usize, what: &str, row: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            what: format!("{what} row {row}"),
            expected: dim,
            actual: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: what.to_string(), row });
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        return Err(Error::ZeroNorm { what: format!("{what} row {row}") });
    }
    Ok(())
}

impl EmbeddingBundle {
    /// Checks every structural and numeric invariant of the bundle.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        for (k, class) in self.classes.iter().enumerate() {
            check_vector(&class.rudimentary_embedding, self.dim, "class_text", k)?;
            if class.candidates.is_empty() {
                return Err(Error::NoCandidates(k));
            }
        }
        for (row, cand) in self.classes.iter().flat_map(|c| &c.candidates).enumerate() {
            check_vector(&cand.embedding, self.dim, "cand_text", row)?;
        }
        for (k, class) in self.control_classes.iter().enumerate() {
            check_vector(&class.rudimentary_embedding, self.dim, "control_class_text", k)?;
        }

        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        for (t, group) in self.tasks.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::EmptyTaskGroup(t));
            }
            for &c in group {
                if c >= self.classes.len() {
                    return Err(Error::ClassOutOfRange { index: c, count: self.classes.len() });
                }
                if let Some(first) = owner.insert(c, t) {
                    return Err(Error::ClassInTwoTasks { class: c, first, second: t });
                }
            }
        }
        if let Some(c) = (0..self.classes.len()).find(|c| !owner.contains_key(c)) {
            return Err(Error::UnassignedClass(c));
        }

        for (split, samples, classes) in [
            ("train_x", &self.train, self.classes.len()),
            ("test_x", &self.test, self.classes.len()),
            ("control_x", &self.control, self.control_classes.len()),
        ] {
            for (row, s) in samples.iter().enumerate() {
                check_vector(&s.embedding, self.dim, split, row)?;
                if s.label >= classes {
                    return Err(Error::ClassOutOfRange { index: s.label, count: classes });
                }
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_of_class(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|g| g.contains(&class))
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Control => &self.control,
        }
    }

    /// Samples of `split` whose class belongs to task `task`.
    pub fn task_samples(&self, split: Split, task: usize) -> Vec<&Sample> {
        let group = &self.tasks[task];
        self.samples(split).iter().filter(|s| group.contains(&s.label)).collect()
    }

    /// Classes of tasks `0..=task`, in class-index order.
    pub fn classes_through(&self, task: usize) -> Vec<usize> {
        let mut seen: Vec<usize> = self.tasks[..=task].iter().flatten().copied().collect();
        seen.sort_unstable();
        seen
    }

    /// A copy of the bundle with its task groups rearranged so that new task
    /// `i` is old task `order[i]`.
    pub fn with_task_order(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.tasks.len()).collect::<Vec<_>>() {
            return Err(Error::Config(format!(
                "task order {order:?} is not a permutation of 0..{}",
                self.tasks.len()
            )));
        }
        let mut out = self.clone();
        out.tasks = order.iter().map(|&t| self.tasks[t].clone()).collect();
        Ok(out)
    }
}

/// Keeps at most `k_per_class` training samples per class, chosen with a
/// seeded shuffle. Retained samples keep their original order; test and
/// control splits are untouched.
pub fn subsample_few_shot(bundle: &EmbeddingBundle, k_per_class: usize, seed: u64) -> Result<EmbeddingBundle> {
    if k_per_class == 0 {
        return Err(Error::Config("few-shot k must be at least 1".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in bundle.train.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; bundle.train.len()];
    for indices in by_class.values_mut() {
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(k_per_class) {
            keep[i] = true;
        }
    }
    let mut out = bundle.clone();
    out.train = bundle
        .train
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(out)
}
