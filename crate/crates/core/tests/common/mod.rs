//! Oracles shared by the integration tests. Nothing here calls into the
//! similarity or loss code under test.

#![allow(dead_code)]

use desclip::bundle::{ClassRecord, DescriptionCandidate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-2 {
            return v;
        }
    }
}

pub fn random_rows(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_vec(rng, dim)).collect()
}

/// Plain cosine, written out independently of the crate's kernels.
pub fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn f32_cos(a: &[f64], b: &[f32]) -> f64 {
    let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    oracle_cos(a, &b)
}

/// Central finite differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += FD_STEP;
            m[k] -= FD_STEP;
            (f(&p) - f(&m)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Brute-force filter: `(chi, kept indices in order)` recomputed candidate
/// by candidate with an explicit selection sort.
pub fn brute_force_filter(
    z: &[f64],
    class: &ClassRecord,
    delta_d: f64,
    gamma: f64,
    require_noun: bool,
) -> (bool, Vec<usize>) {
    let cs = f32_cos(z, &class.rudimentary_embedding);
    let mut eligible = Vec::new();
    let mut best = cs;
    for (j, c) in class.candidates.iter().enumerate() {
        if require_noun && !c.cls_noun {
            continue;
        }
        let s = f32_cos(z, &c.embedding);
        if s > best {
            best = s;
        }
        eligible.push((j, s));
    }
    let chi = best > delta_d;
    if !chi {
        return (false, Vec::new());
    }
    let mut pool: Vec<(usize, f64)> = eligible.into_iter().filter(|&(_, s)| s > cs + gamma).collect();
    let mut order = Vec::new();
    while !pool.is_empty() {
        let mut pick = 0;
        for k in 1..pool.len() {
            let (j, s) = pool[k];
            let (bj, bs) = pool[pick];
            if s > bs || (s == bs && j < bj) {
                pick = k;
            }
        }
        order.push(pool.remove(pick).0);
    }
    (true, order)
}

pub fn random_class(rng: &mut impl Rng, dim: usize, candidates: usize) -> ClassRecord {
    let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    ClassRecord {
        name: "c".into(),
        rudimentary_embedding: to32(random_vec(rng, dim)),
        candidates: (0..candidates)
            .map(|_| DescriptionCandidate {
                text: String::new(),
                embedding: to32(random_vec(rng, dim)),
                cls_noun: rng.random_bool(0.7),
            })
            .collect(),
    }
}

/// Nearest normalized prompt embedding by cosine; ties to the lowest index.
pub fn nearest_prompt(z: &[f64], prompts: &[(usize, Vec<f64>)]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (c, w) in prompts {
        let s = oracle_cos(z, w);
        if s > best.1 || (s == best.1 && *c < best.0) {
            best = (*c, s);
        }
    }
    best.0
}
