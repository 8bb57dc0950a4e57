//! Small numeric helpers shared by the evaluation modules.

use crate::error::{Error, Result};

/// Tolerance for accepting a probability or weight vector that does not sum
/// exactly to one. Vectors within this distance are renormalized.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Magnitude below which a theoretically nonnegative quantity is treated as
/// rounding noise and clamped to zero.
pub const NEG_CLAMP_TOL: f64 = 1e-10;

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (tree) summation. The split points depend only on the slice
/// length, so the result is a pure function of the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Clamp a quantity that must be nonnegative. Values in `[-tol * scale, 0)`
/// become zero; anything more negative is reported as a consistency error.
pub fn clamp_nonneg(value: f64, scale: f64, what: &str) -> Result<f64> {
    if value.is_nan() {
        return Err(Error::Consistency {
            what: what.to_string(),
            value,
        });
    }
    if value >= 0.0 {
        return Ok(value);
    }
    if value >= -NEG_CLAMP_TOL * scale.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Consistency {
            what: what.to_string(),
            value,
        })
    }
}

/// Validate a probability vector and renormalize it to sum to one.
///
/// Entries must be finite and nonnegative, and the sum must lie within
/// [`PROB_SUM_TOL`] of one. Gross violations are rejected, not repaired.
pub fn normalize_probabilities(mut probs: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::InvalidProbabilities(format!("{what}: empty vector")));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidProbabilities(format!(
                "{what}: entry {i} is not finite"
            )));
        }
        if p < 0.0 {
            return Err(Error::InvalidProbabilities(format!(
                "{what}: entry {i} is negative ({p})"
            )));
        }
    }
    let total = pairwise_sum(&probs);
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidProbabilities(format!(
            "{what}: entries sum to {total}, not 1"
        )));
    }
    if total != 1.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
    Ok(probs)
}

/// Relative difference `|a - b| / max(1, |a|, |b|)`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}
