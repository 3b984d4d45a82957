//! Training objective: instance matching (IM), text alignment (TA) and
//! reconstructed intra-task classification (RIC), with closed-form gradients.
//!
//! All similarities are cosines, so every gradient passes through the
//! normalization `x ↦ x/‖x‖`, whose Jacobian is `(I − x̂x̂ᵀ)/‖x‖`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterState;
use crate::bundle::EmbeddingBundle;
use crate::calibrate::{ShiftBank, ShiftStatus};
use crate::filter::BatchEvidence;
use crate::linalg::{add_cosine_grad, dot, norm, softmax, to_f64, log_sum_exp, MIN_NORM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    /// Classification temperature τ.
    pub tau: f64,
    /// Instance-matching temperature, `10·τ` by default.
    pub tau_tilde: f64,
}

impl Temperatures {
    pub fn from_tau(tau: f64) -> Self {
        Self { tau, tau_tilde: 10.0 * tau }
    }
}

impl Default for Temperatures {
    fn default() -> Self {
        Self::from_tau(0.01)
    }
}

/// Coefficients of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub temperatures: Temperatures,
    pub beta: f64,
    pub lambda_im: f64,
    pub lambda_ta: f64,
    pub lambda_ric: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            temperatures: Temperatures::default(),
            beta: 1.0,
            lambda_im: 2.0,
            lambda_ta: 0.5,
            lambda_ric: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_im: f64,
    pub l_ta: f64,
    pub l_ric: f64,
    pub total: f64,
    pub valid_count: usize,
}

impl LossBreakdown {
    pub fn combine(l_im: f64, l_ta: f64, l_ric: f64, valid_count: usize, params: &ObjectiveParams) -> Self {
        let total = params.lambda_im * l_im + params.lambda_ta * l_ta + params.lambda_ric * l_ric;
        Self { l_im, l_ta, l_ric, total, valid_count }
    }
}

/// A vector with its norm and direction, computed once.
struct Unit {
    norm: f64,
    dir: Vec<f64>,
}

impl Unit {
    fn new(v: &[f64], what: &str) -> Result<Self> {
        let n = norm(v);
        if !(n > MIN_NORM) {
            return Err(Error::ZeroNorm { what: what.to_string() });
        }
        Ok(Self { norm: n, dir: v.iter().map(|x| x / n).collect() })
    }
}

fn check_dims(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    match rows.iter().find(|r| r.len() != dim) {
        Some(r) => Err(Error::DimensionMismatch { what: what.to_string(), expected: dim, actual: r.len() }),
        None => Ok(()),
    }
}

/// Batch contrastive loss pairing each feature `z_i` with its text embedding
/// `h_i` against the other pairs' text embeddings.
///
/// Returns the mean loss and `∂L/∂z_i`; the text embeddings are constants.
pub fn instance_matching_loss(zs: &[Vec<f64>], hs: &[Vec<f64>], tau_tilde: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = zs.len();
    if n == 0 {
        return Err(Error::Empty("valid set"));
    }
    if hs.len() != n {
        return Err(Error::DimensionMismatch { what: "paired text embeddings".into(), expected: n, actual: hs.len() });
    }
    let dim = zs[0].len();
    check_dims(zs, dim, "instance features")?;
    check_dims(hs, dim, "paired text embeddings")?;

    let z_units = zs.iter().map(|z| Unit::new(z, "visual feature")).collect::<Result<Vec<_>>>()?;
    let h_units = hs.iter().map(|h| Unit::new(h, "paired text embedding")).collect::<Result<Vec<_>>>()?;

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; dim]; n];
    for (i, zu) in z_units.iter().enumerate() {
        let cos: Vec<f64> = h_units.iter().map(|hu| dot(&zu.dir, &hu.dir)).collect();
        let logits: Vec<f64> = cos.iter().map(|c| c / tau_tilde).collect();
        loss += log_sum_exp(&logits) - logits[i];
        let probs = softmax(&logits);
        for (j, hu) in h_units.iter().enumerate() {
            let coeff = (probs[j] - if i == j { 1.0 } else { 0.0 }) / (n as f64 * tau_tilde);
            add_cosine_grad(&mut grads[i], coeff, &zu.dir, &hu.dir, cos[j], zu.norm);
        }
    }
    Ok((loss / n as f64, grads))
}

/// Alignment of one calibrated embedding with the kept candidate embeddings
/// of a sample: mean over `u` of `β·‖ŵ − û‖ + (1 − ⟨ŵ, û⟩)`.
///
/// Returns the loss and its gradient with respect to the shift weight, where
/// `∂w′/∂s = shift_scale·I`.
pub fn text_alignment_loss(
    w_cal: &[f64],
    kept: &[Vec<f64>],
    beta: f64,
    shift_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    if kept.is_empty() {
        return Err(Error::Empty("filtered evidence"));
    }
    let dim = w_cal.len();
    check_dims(kept, dim, "kept candidate embeddings")?;
    let w = Unit::new(w_cal, "calibrated embedding")?;
    let m = kept.len() as f64;

    let mut loss = 0.0;
    // gradient with respect to ŵ
    let mut g_dir = vec![0.0; dim];
    for u in kept {
        let u = Unit::new(u, "candidate embedding")?;
        let diff: Vec<f64> = w.dir.iter().zip(&u.dir).map(|(a, b)| a - b).collect();
        let dist = norm(&diff);
        let cos = dot(&w.dir, &u.dir);
        loss += beta * dist + (1.0 - cos);
        for ((g, d), ud) in g_dir.iter_mut().zip(&diff).zip(&u.dir) {
            // ‖ŵ − û‖ has no gradient at ŵ = û; take zero there.
            let dist_term = if dist > MIN_NORM { beta * d / dist } else { 0.0 };
            *g += (dist_term - ud) / m;
        }
    }
    // project through the normalization of w′
    let radial = dot(&g_dir, &w.dir);
    let grad_s = g_dir
        .iter()
        .zip(&w.dir)
        .map(|(g, d)| shift_scale * (g - radial * d) / w.norm)
        .collect();
    Ok((loss / m, grad_s))
}

/// Gradients of the RIC loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RicGradients {
    /// `∂L/∂z_i` for every batch element.
    pub features: Vec<Vec<f64>>,
    /// `∂L/∂s_k` for every class of the task, in the order of `w_cal_task`.
    pub shifts: Vec<Vec<f64>>,
}

/// Mean cross-entropy of the cosine logits `cos(z_i, w′_k)/τ` over the
/// current task's classes. `labels` are positions in `w_cal_task`.
pub fn ric_loss(
    zs: &[Vec<f64>],
    labels: &[usize],
    w_cal_task: &[Vec<f64>],
    tau: f64,
    shift_scale: f64,
) -> Result<(f64, RicGradients)> {
    let b = zs.len();
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    if w_cal_task.is_empty() {
        return Err(Error::Empty("task class set"));
    }
    if labels.len() != b {
        return Err(Error::DimensionMismatch { what: "batch labels".into(), expected: b, actual: labels.len() });
    }
    let dim = zs[0].len();
    check_dims(zs, dim, "batch features")?;
    check_dims(w_cal_task, dim, "calibrated embeddings")?;
    if let Some(&label) = labels.iter().find(|&&l| l >= w_cal_task.len()) {
        return Err(Error::ClassOutOfRange { index: label, count: w_cal_task.len() });
    }

    let w_units = w_cal_task.iter().map(|w| Unit::new(w, "calibrated embedding")).collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut g_z = vec![vec![0.0; dim]; b];
    let mut g_w = vec![vec![0.0; dim]; w_units.len()];
    for (i, z) in zs.iter().enumerate() {
        let zu = Unit::new(z, "visual feature")?;
        let cos: Vec<f64> = w_units.iter().map(|wu| dot(&zu.dir, &wu.dir)).collect();
        let logits: Vec<f64> = cos.iter().map(|c| c / tau).collect();
        loss += log_sum_exp(&logits) - logits[labels[i]];
        let probs = softmax(&logits);
        for (k, wu) in w_units.iter().enumerate() {
            let coeff = (probs[k] - if k == labels[i] { 1.0 } else { 0.0 }) / (b as f64 * tau);
            add_cosine_grad(&mut g_z[i], coeff, &zu.dir, &wu.dir, cos[k], zu.norm);
            add_cosine_grad(&mut g_w[k], coeff, &wu.dir, &zu.dir, cos[k], wu.norm);
        }
    }
    let shifts = g_w
        .into_iter()
        .map(|g| g.into_iter().map(|x| shift_scale * x).collect())
        .collect();
    Ok((loss / b as f64, RicGradients { features: g_z, shifts }))
}

/// One training batch: raw inputs, their adapted features and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub inputs: Vec<Vec<f64>>,
    pub adapted: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl StepInput {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, adapter: &AdapterState) -> Result<Self> {
        let adapted = inputs.iter().map(|z| adapter.adapt(z)).collect::<Result<Vec<_>>>()?;
        Ok(Self { inputs, adapted, labels })
    }
}

/// Loss terms and gradients for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub breakdown: LossBreakdown,
    /// `∂L/∂(adapted feature)` per batch element.
    pub features: Vec<Vec<f64>>,
    /// `∂L/∂W`, present when the adapter is enabled.
    pub adapter: Option<Vec<f64>>,
    /// `∂L/∂s` for the learnable classes only.
    pub shifts: BTreeMap<usize, Vec<f64>>,
}

/// Assembles `λ_IM·L_IM + λ_TA·L_TA + λ_RIC·L_RIC` for a batch of task `task`.
///
/// IM and TA use only the valid samples of `evidence`; RIC uses the whole
/// batch. Gradients are produced for the adapter weights and for the shifts
/// of learnable classes; nothing else receives a gradient.
pub fn total_loss(
    step: &StepInput,
    evidence: &BatchEvidence,
    bank: &ShiftBank,
    adapter: &AdapterState,
    bundle: &EmbeddingBundle,
    task: usize,
    params: &ObjectiveParams,
) -> Result<StepGradients> {
    let group = bundle
        .tasks
        .get(task)
        .ok_or(Error::TaskOutOfRange { task, count: bundle.tasks.len() })?;
    let positions: BTreeMap<usize, usize> = group.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    let labels = step
        .labels
        .iter()
        .map(|&l| positions.get(&l).copied().ok_or(Error::LabelOutOfTask { label: l, task }))
        .collect::<Result<Vec<_>>>()?;
    let w_cal = group.iter().map(|&c| bank.calibrated(bundle, c)).collect::<Result<Vec<_>>>()?;
    let shift_scale = bank.mode.shift_scale(bank.alpha);
    let dim = bundle.dim;

    let mut features = vec![vec![0.0; dim]; step.adapted.len()];
    let mut shift_grads = vec![vec![0.0; dim]; group.len()];

    let (mut l_im, mut l_ta) = (0.0, 0.0);
    let valid = &evidence.valid;
    if !valid.is_empty() {
        let zs: Vec<Vec<f64>> = valid.iter().map(|&i| step.adapted[i].clone()).collect();
        let hs: Vec<Vec<f64>> = valid
            .iter()
            .map(|&i| {
                let j = evidence.evidence[i].paired_index.expect("valid samples have a pair");
                to_f64(&bundle.classes[step.labels[i]].candidates[j].embedding)
            })
            .collect();
        let (loss, grads) = instance_matching_loss(&zs, &hs, params.temperatures.tau_tilde)?;
        l_im = loss;
        for (&i, g) in valid.iter().zip(grads) {
            features[i].iter_mut().zip(g).for_each(|(f, x)| *f += params.lambda_im * x);
        }

        for &i in valid {
            let class = &bundle.classes[step.labels[i]];
            let kept: Vec<Vec<f64>> = evidence.evidence[i]
                .kept
                .iter()
                .map(|&(j, _)| to_f64(&class.candidates[j].embedding))
                .collect();
            let (loss, g) = text_alignment_loss(&w_cal[labels[i]], &kept, params.beta, shift_scale)?;
            l_ta += loss;
            shift_grads[labels[i]].iter_mut().zip(g).for_each(|(s, x)| *s += params.lambda_ta * x);
        }
    }

    let (l_ric, ric) = ric_loss(&step.adapted, &labels, &w_cal, params.temperatures.tau, shift_scale)?;
    for (f, g) in features.iter_mut().zip(ric.features) {
        f.iter_mut().zip(g).for_each(|(a, x)| *a += params.lambda_ric * x);
    }
    for (s, g) in shift_grads.iter_mut().zip(ric.shifts) {
        s.iter_mut().zip(g).for_each(|(a, x)| *a += params.lambda_ric * x);
    }

    let shifts = group
        .iter()
        .zip(shift_grads)
        .filter(|(c, _)| bank.entry(**c).is_some_and(|e| e.status == ShiftStatus::Learnable))
        .map(|(&c, g)| (c, g))
        .collect();
    let adapter_grad = adapter.enabled.then(|| adapter.weight_gradient(&features, &step.inputs));

    Ok(StepGradients {
        breakdown: LossBreakdown::combine(l_im, l_ta, l_ric, valid.len(), params),
        features,
        adapter: adapter_grad,
        shifts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Central differences of `f` around `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|k| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[k] += h;
                m[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        let scale = analytic.iter().chain(numeric).fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale).max(1e-10);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n} (rel {rel})");
        }
    }

    #[test]
    fn im_single_pair_is_zero() {
        let (l, g) = instance_matching_loss(&[vec![1.0, 2.0]], &[vec![0.5, -1.0]], 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g[0].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn im_identical_pairs_is_ln2() {
        let z = vec![0.3, 0.4, 0.5];
        let h = vec![1.0, 0.0, 0.2];
        let (l, _) = instance_matching_loss(&[z.clone(), z], &[h.clone(), h], 0.1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn im_rejects_empty() {
        assert!(matches!(instance_matching_loss(&[], &[], 0.1), Err(Error::Empty(_))));
    }

    #[test]
    fn im_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let zs = random_rows(&mut rng, 3, 4);
        let hs = random_rows(&mut rng, 3, 4);
        let (_, grads) = instance_matching_loss(&zs, &hs, 0.5).unwrap();
        for i in 0..3 {
            let numeric = numeric_grad(&zs[i], |x| {
                let mut zz = zs.clone();
                zz[i] = x.to_vec();
                instance_matching_loss(&zz, &hs, 0.5).unwrap().0
            });
            assert_close(&grads[i], &numeric);
        }
    }

    #[test]
    fn ta_examples() {
        let (l, _) = text_alignment_loss(&[2.0, 0.0], &[vec![3.0, 0.0]], 1.0, 0.1).unwrap();
        assert!(l.abs() < 1e-15);
        let (l, _) = text_alignment_loss(&[1.0, 0.0], &[vec![0.0, 1.0]], 1.0, 0.1).unwrap();
        assert!((l - (2f64.sqrt() + 1.0)).abs() < 1e-12);
        assert!(text_alignment_loss(&[1.0, 0.0], &[], 1.0, 0.1).is_err());
        assert!(text_alignment_loss(&[0.0, 0.0], &[vec![1.0, 0.0]], 1.0, 0.1).is_err());
    }

    #[test]
    fn ta_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_rows(&mut rng, 1, 5).remove(0);
        let kept = random_rows(&mut rng, 3, 5);
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let alpha = 0.1;
        let loss_at = |s: &[f64]| {
            let wc = crate::calibrate::calibrate_embedding(&w, s, alpha).unwrap();
            text_alignment_loss(&wc, &kept, 0.7, alpha).unwrap().0
        };
        let wc = crate::calibrate::calibrate_embedding(&w, &s, alpha).unwrap();
        let (_, g) = text_alignment_loss(&wc, &kept, 0.7, alpha).unwrap();
        assert_close(&g, &numeric_grad(&s, loss_at));
    }

    #[test]
    fn ric_examples() {
        let (l, g) = ric_loss(&[vec![1.0, 0.0]], &[0], &[vec![0.3, 0.2]], 0.01, 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.features[0].iter().all(|x| x.abs() < 1e-12));
        // equal logits
        let (l, _) = ric_loss(&[vec![1.0, 0.0]], &[1], &[vec![1.0, 1.0], vec![1.0, -1.0]], 0.01, 0.1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            ric_loss(&[vec![1.0, 0.0]], &[2], &[vec![1.0, 1.0]], 0.01, 0.1),
            Err(Error::ClassOutOfRange { index: 2, count: 1 })
        ));
    }

    #[test]
    fn ric_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (dim, classes, batch, alpha, tau) = (4, 3, 5, 0.1, 0.2);
        let ws = random_rows(&mut rng, classes, dim);
        let ss = random_rows(&mut rng, classes, dim);
        let zs = random_rows(&mut rng, batch, dim);
        let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
        let cal = |ss: &[Vec<f64>]| -> Vec<Vec<f64>> {
            ws.iter()
                .zip(ss)
                .map(|(w, s)| crate::calibrate::calibrate_embedding(w, s, alpha).unwrap())
                .collect()
        };
        let (_, g) = ric_loss(&zs, &labels, &cal(&ss), tau, alpha).unwrap();
        for i in 0..batch {
            let numeric = numeric_grad(&zs[i], |x| {
                let mut zz = zs.clone();
                zz[i] = x.to_vec();
                ric_loss(&zz, &labels, &cal(&ss), tau, alpha).unwrap().0
            });
            assert_close(&g.features[i], &numeric);
        }
        for k in 0..classes {
            let numeric = numeric_grad(&ss[k], |x| {
                let mut s2 = ss.clone();
                s2[k] = x.to_vec();
                ric_loss(&zs, &labels, &cal(&s2), tau, alpha).unwrap().0
            });
            assert_close(&g.shifts[k], &numeric);
        }
    }

    #[test]
    fn breakdown_arithmetic() {
        let p = ObjectiveParams::default();
        let b = LossBreakdown::combine(0.5, 0.2, 0.7, 3, &p);
        assert!((b.total - 1.8).abs() < 1e-10);
    }

    #[test]
    fn default_temperatures() {
        let t = Temperatures::default();
        assert_eq!(t.tau, 0.01);
        assert!((t.tau_tilde - 10.0 * t.tau).abs() < 1e-15);
    }
}
