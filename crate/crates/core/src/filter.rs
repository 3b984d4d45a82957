//! Anchor-based selection of description candidates.
//!
//! For a visual feature `z` of class `c`, the cosine to the class prompt
//! embedding is the anchor. A sample is usable only if either the anchor or
//! its best candidate score clears `delta_d`; among the candidates of a usable
//! sample, those scoring strictly above `anchor + gamma` are kept, best first.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassRecord, EmbeddingBundle};
use crate::linalg::{cosine, to_f64};
use crate::{Error, Result};

/// Score given to candidates excluded by the class-noun rule. A finite
/// sentinel keeps the ordering total.
pub const EXCLUDED_SCORE: f64 = f64::MIN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Feature-validity threshold on the best similarity.
    pub delta_d: f64,
    /// Margin a candidate must clear above the anchor.
    pub gamma: f64,
    /// Only consider candidates whose sentence names the class as a noun.
    pub require_cls_noun: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { delta_d: 0.20, gamma: 0.015, require_cls_noun: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredEvidence {
    pub chi: bool,
    /// Cosine between the feature and the class prompt embedding.
    pub cs: f64,
    /// Anchor threshold; `Some(cs)` exactly when `chi` holds.
    pub anchor: Option<f64>,
    /// `(candidate index, score)`, descending by score, ties by index.
    pub kept: Vec<(usize, f64)>,
    pub paired_index: Option<usize>,
}

impl FilteredEvidence {
    /// Whether the sample belongs to the valid set used by instance matching
    /// and text alignment.
    pub fn is_valid(&self) -> bool {
        self.chi && !self.kept.is_empty()
    }
}

/// Cosine between `z` and every candidate of `class`.
pub fn candidate_scores(z: &[f64], class: &ClassRecord, params: &FilterParams) -> Result<Vec<f64>> {
    if class.candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    class
        .candidates
        .iter()
        .map(|cand| {
            if params.require_cls_noun && !cand.cls_noun {
                Ok(EXCLUDED_SCORE)
            } else {
                cosine(z, &to_f64(&cand.embedding))
            }
        })
        .collect()
}

pub fn evaluate_chi(cs: f64, scores: &[f64], params: &FilterParams) -> bool {
    let best = scores.iter().copied().fold(cs, f64::max);
    best > params.delta_d
}

pub fn filter_sample(z: &[f64], class: &ClassRecord, params: &FilterParams) -> Result<FilteredEvidence> {
    let cs = cosine(z, &to_f64(&class.rudimentary_embedding))?;
    let scores = candidate_scores(z, class, params)?;
    let chi = evaluate_chi(cs, &scores, params);
    if !chi {
        return Ok(FilteredEvidence { chi, cs, anchor: None, kept: Vec::new(), paired_index: None });
    }
    let threshold = cs + params.gamma;
    let mut kept: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > threshold)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let paired_index = kept.first().map(|&(j, _)| j);
    Ok(FilteredEvidence { chi, cs, anchor: Some(cs), kept, paired_index })
}

/// Filter output for a batch plus the indices of its valid samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEvidence {
    pub evidence: Vec<FilteredEvidence>,
    pub valid: Vec<usize>,
}

/// Filters every `(feature, label)` pair of a batch drawn from task `task`.
pub fn filter_batch(
    zs: &[Vec<f64>],
    labels: &[usize],
    bundle: &EmbeddingBundle,
    task: usize,
    params: &FilterParams,
) -> Result<BatchEvidence> {
    if zs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "batch labels".into(),
            expected: zs.len(),
            actual: labels.len(),
        });
    }
    let group = bundle
        .tasks
        .get(task)
        .ok_or(Error::TaskOutOfRange { task, count: bundle.tasks.len() })?;
    if let Some(&label) = labels.iter().find(|l| !group.contains(l)) {
        return Err(Error::LabelOutOfTask { label, task });
    }
    let evidence = zs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(z, &label)| filter_sample(z, &bundle.classes[label], params))
        .collect::<Result<Vec<_>>>()?;
    let valid = evidence
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_valid())
        .map(|(i, _)| i)
        .collect();
    Ok(BatchEvidence { evidence, valid })
}
