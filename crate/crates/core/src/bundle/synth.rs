//! Seeded Gaussian-cluster benchmark generator.
//!
//! Each class is a cluster around a random unit mean. Each class also owns
//! `candidates_per_class` attribute directions; a sample carries each attribute
//! independently with probability `attribute_share`, which pushes it towards the
//! matching candidate embedding (mean plus attribute offset). The class prompt
//! embedding is the mean rotated away by an angle of `unfamiliarity · π/2`, so
//! zero-shot prediction degrades as unfamiliarity grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassRecord, ControlClass, DescriptionCandidate, EmbeddingBundle, Sample};
use crate::linalg::{dot, norm};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    /// Training samples per class.
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub candidates_per_class: usize,
    /// Length of each attribute offset added to the class mean.
    pub attribute_noise: f64,
    /// Probability that a sample carries a given attribute of its class.
    pub attribute_share: f64,
    /// Standard deviation of isotropic sample noise (total, not per axis).
    pub cluster_spread: f64,
    /// Rotation of prompt embeddings away from their class mean, in units of π/2.
    pub unfamiliarity: f64,
    /// Linear ramp of unfamiliarity across tasks: the first task gets
    /// `unfamiliarity − skew/2`, the last `unfamiliarity + skew/2`.
    pub unfamiliarity_skew: f64,
    /// Fraction of candidates whose text names the class (at least one per class).
    pub cls_noun_fraction: f64,
    pub control_classes: usize,
    pub control_per_class: usize,
    /// Unfamiliarity of the control-class prompts.
    pub control_unfamiliarity: f64,
    /// Normalize visual and prompt embeddings to unit length.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            classes_per_task: 4,
            dim: 32,
            samples_per_class: 40,
            test_per_class: 40,
            candidates_per_class: 12,
            attribute_noise: 0.6,
            attribute_share: 0.3,
            cluster_spread: 0.9,
            unfamiliarity: 0.55,
            unfamiliarity_skew: 0.0,
            cls_noun_fraction: 0.75,
            control_classes: 10,
            control_per_class: 20,
            control_unfamiliarity: 0.75,
            normalize: true,
            seed: 0,
        }
    }
}

/// Generator-side ground truth, not stored in the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub class_means: Vec<Vec<f32>>,
    /// Unfamiliarity actually applied to each class.
    pub unfamiliarity: Vec<f64>,
}

impl SynthSpec {
    fn check(&self) -> Result<()> {
        let counts = [
            ("num_tasks", self.num_tasks),
            ("classes_per_task", self.classes_per_task),
            ("samples_per_class", self.samples_per_class),
            ("test_per_class", self.test_per_class),
            ("candidates_per_class", self.candidates_per_class),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidSynthSpec(format!("{name} must be positive")));
        }
        if self.dim < 2 {
            return Err(Error::InvalidSynthSpec("dim must be at least 2".into()));
        }
        if self.control_classes > 0 && self.control_per_class == 0 {
            return Err(Error::InvalidSynthSpec("control_per_class must be positive".into()));
        }
        let reals = [
            self.attribute_noise,
            self.attribute_share,
            self.cluster_spread,
            self.unfamiliarity,
            self.unfamiliarity_skew,
            self.cls_noun_fraction,
            self.control_unfamiliarity,
        ];
        if reals.iter().any(|v| !v.is_finite()) || self.attribute_noise < 0.0 || self.cluster_spread < 0.0 {
            return Err(Error::InvalidSynthSpec("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit vector orthogonal to the unit vector `axis`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, axis: &[f64]) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, axis.len());
        let proj = dot(&v, axis);
        v.iter_mut().zip(axis).for_each(|(x, a)| *x -= proj * a);
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn rotate_towards(mean: &[f64], dir: &[f64], unfamiliarity: f64) -> Vec<f64> {
    let angle = unfamiliarity.clamp(0.0, 1.0) * std::f64::consts::FRAC_PI_2;
    let (s, c) = angle.sin_cos();
    mean.iter().zip(dir).map(|(m, d)| c * m + s * d).collect()
}

fn finish(v: Vec<f64>, normalize: bool) -> Vec<f32> {
    let n = norm(&v);
    if normalize && n > 0.0 {
        v.into_iter().map(|x| (x / n) as f32).collect()
    } else {
        v.into_iter().map(|x| x as f32).collect()
    }
}

struct ClassModel {
    mean: Vec<f64>,
    attributes: Vec<Vec<f64>>,
}

impl ClassModel {
    fn draw(&self, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let dim = self.mean.len();
        let mut z = self.mean.clone();
        for attr in &self.attributes {
            if rng.random::<f64>() < spec.attribute_share {
                z.iter_mut().zip(attr).for_each(|(x, a)| *x += spec.attribute_noise * a);
            }
        }
        let sigma = spec.cluster_spread / (dim as f64).sqrt();
        for x in z.iter_mut() {
            *x += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        finish(z, spec.normalize)
    }
}

pub fn synth_bundle(spec: &SynthSpec) -> Result<EmbeddingBundle> {
    synth_bundle_with_truth(spec).map(|(b, _)| b)
}

/// Generates a bundle together with the class means and per-class
/// unfamiliarity used to build it.
pub fn synth_bundle_with_truth(spec: &SynthSpec) -> Result<(EmbeddingBundle, SynthTruth)> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let num_classes = spec.num_tasks * spec.classes_per_task;

    let mut models = Vec::with_capacity(num_classes);
    let mut classes = Vec::with_capacity(num_classes);
    let mut truth = SynthTruth { class_means: Vec::new(), unfamiliarity: Vec::new() };
    let noun_count = ((spec.cls_noun_fraction.clamp(0.0, 1.0) * spec.candidates_per_class as f64).ceil()
        as usize)
        .max(1);

    for k in 0..num_classes {
        let task = k / spec.classes_per_task;
        let ramp = if spec.num_tasks > 1 {
            task as f64 / (spec.num_tasks - 1) as f64 - 0.5
        } else {
            0.0
        };
        let unfamiliarity = (spec.unfamiliarity + spec.unfamiliarity_skew * ramp).clamp(0.0, 1.0);

        let mean = unit(&mut rng, dim);
        let attributes: Vec<Vec<f64>> =
            (0..spec.candidates_per_class).map(|_| orthogonal_unit(&mut rng, &mean)).collect();
        let away = orthogonal_unit(&mut rng, &mean);
        let prompt = rotate_towards(&mean, &away, unfamiliarity);

        let name = format!("class_{k:03}");
        let candidates = attributes
            .iter()
            .enumerate()
            .map(|(j, attr)| {
                let cls_noun = j < noun_count;
                let text = if cls_noun {
                    format!("A {name} has attribute {j} on display.")
                } else {
                    format!("Attribute {j} is visible in the scene.")
                };
                let embedding = mean
                    .iter()
                    .zip(attr)
                    .map(|(m, a)| (m + spec.attribute_noise * a) as f32)
                    .collect();
                DescriptionCandidate { text, embedding, cls_noun }
            })
            .collect();

        truth.class_means.push(mean.iter().map(|&x| x as f32).collect());
        truth.unfamiliarity.push(unfamiliarity);
        classes.push(ClassRecord { name, rudimentary_embedding: finish(prompt, spec.normalize), candidates });
        models.push(ClassModel { mean, attributes });
    }

    let mut train = Vec::with_capacity(num_classes * spec.samples_per_class);
    let mut test = Vec::with_capacity(num_classes * spec.test_per_class);
    for (label, model) in models.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            train.push(Sample { embedding: model.draw(spec, &mut rng), label });
        }
        for _ in 0..spec.test_per_class {
            test.push(Sample { embedding: model.draw(spec, &mut rng), label });
        }
    }

    let mut control = Vec::new();
    let mut control_classes = Vec::new();
    for k in 0..spec.control_classes {
        let mean = unit(&mut rng, dim);
        let away = orthogonal_unit(&mut rng, &mean);
        let prompt = rotate_towards(&mean, &away, spec.control_unfamiliarity);
        let model = ClassModel { mean, attributes: Vec::new() };
        control_classes.push(ControlClass {
            name: format!("control_{k:03}"),
            rudimentary_embedding: finish(prompt, spec.normalize),
        });
        for _ in 0..spec.control_per_class {
            control.push(Sample { embedding: model.draw(spec, &mut rng), label: k });
        }
    }

    let tasks = (0..spec.num_tasks)
        .map(|t| (t * spec.classes_per_task..(t + 1) * spec.classes_per_task).collect())
        .collect();
    let bundle = EmbeddingBundle { dim, classes, tasks, train, test, control, control_classes };
    bundle.validate()?;
    Ok((bundle, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine, to_f64};

    fn small() -> SynthSpec {
        SynthSpec {
            num_tasks: 2,
            classes_per_task: 3,
            dim: 8,
            samples_per_class: 10,
            test_per_class: 5,
            candidates_per_class: 4,
            control_classes: 2,
            control_per_class: 3,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(synth_bundle(&small()).unwrap(), synth_bundle(&small()).unwrap());
        let other = SynthSpec { seed: 8, ..small() };
        assert_ne!(synth_bundle(&small()).unwrap(), synth_bundle(&other).unwrap());
    }

    #[test]
    fn zero_attribute_noise_collapses_candidates_to_mean() {
        let spec = SynthSpec { attribute_noise: 0.0, ..small() };
        let (b, truth) = synth_bundle_with_truth(&spec).unwrap();
        for (class, mean) in b.classes.iter().zip(&truth.class_means) {
            for cand in &class.candidates {
                assert_eq!(&cand.embedding, mean);
            }
        }
    }

    #[test]
    fn normalized_output_is_unit_norm() {
        let b = synth_bundle(&small()).unwrap();
        let rows = b
            .train
            .iter()
            .chain(&b.test)
            .chain(&b.control)
            .map(|s| &s.embedding)
            .chain(b.classes.iter().map(|c| &c.rudimentary_embedding));
        for row in rows {
            assert!((norm(&to_f64(row)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn familiar_prompts_classify_separable_clusters_perfectly() {
        // Nearest-prompt classification by brute force over all classes.
        let spec = SynthSpec {
            unfamiliarity: 0.0,
            cluster_spread: 0.3,
            attribute_noise: 0.2,
            dim: 32,
            ..small()
        };
        let b = synth_bundle(&spec).unwrap();
        let correct = b
            .train
            .iter()
            .filter(|s| {
                let z = to_f64(&s.embedding);
                let best = (0..b.classes.len())
                    .max_by(|&i, &j| {
                        let ci = cosine(&z, &to_f64(&b.classes[i].rudimentary_embedding)).unwrap();
                        let cj = cosine(&z, &to_f64(&b.classes[j].rudimentary_embedding)).unwrap();
                        ci.partial_cmp(&cj).unwrap()
                    })
                    .unwrap();
                best == s.label
            })
            .count();
        assert_eq!(correct, b.train.len());
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(matches!(
            synth_bundle(&SynthSpec { num_tasks: 0, ..small() }),
            Err(Error::InvalidSynthSpec(_))
        ));
        assert!(synth_bundle(&SynthSpec { dim: 1, ..small() }).is_err());
        assert!(synth_bundle(&SynthSpec { candidates_per_class: 0, ..small() }).is_err());
    }

    #[test]
    fn at_least_one_noun_candidate_per_class() {
        let spec = SynthSpec { cls_noun_fraction: 0.0, ..small() };
        let b = synth_bundle(&spec).unwrap();
        assert!(b.classes.iter().all(|c| c.candidates.iter().any(|d| d.cls_noun)));
    }
}
