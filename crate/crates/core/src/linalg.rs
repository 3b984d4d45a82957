//! Small dense-vector helpers shared by the similarity kernels.

use crate::{Error, Result};

/// Norms at or below this value are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a / ‖a‖`, failing on vectors with norm below [`MIN_NORM`].
pub fn normalized(a: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = norm(a);
    if !(n > MIN_NORM) {
        return Err(Error::ZeroNorm { what: what.to_string() });
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Cosine similarity between two vectors of equal length.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "cosine operands".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if !(na > MIN_NORM) || !(nb > MIN_NORM) {
        return Err(Error::ZeroNorm { what: "cosine operand".into() });
    }
    Ok(dot(a, b) / (na * nb))
}

/// Accumulates `coeff * ∂cos(x, y)/∂x` into `out`, given the unit vectors
/// `x̂`, `ŷ`, their cosine and `‖x‖`.
///
/// `∂cos/∂x = (ŷ − cos·x̂) / ‖x‖`
pub(crate) fn add_cosine_grad(
    out: &mut [f64],
    coeff: f64,
    x_hat: &[f64],
    y_hat: &[f64],
    cos: f64,
    x_norm: f64,
) {
    let scale = coeff / x_norm;
    for ((o, xh), yh) in out.iter_mut().zip(x_hat).zip(y_hat) {
        *o += scale * (yh - cos * xh);
    }
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `values`, stable against large logits.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}
