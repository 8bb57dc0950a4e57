//! Disagreement within a linear pool.
//!
//! For a kernel score the pool's entropy splits into the weighted average
//! of component entropies plus a disagreement term
//!
//! ```text
//! D = sum_i w_i d(F_w, F_i) = 1/2 E_{F_w} L - 1/2 sum_i w_i E_{F_i} L
//! ```
//!
//! and the same `D` is the pool's realized score advantage over the
//! average component, whatever the outcome. On a finite outcome set the
//! pool also minimizes the average divergence to the components.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{linear_pool, mean_and_variance, Outcome, PoolSpec};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelMatrix, KernelSpec, Rule};
use crate::numeric::{clamp_nonneg, normalize_probabilities, pairwise_sum};
use crate::scoring::{cross_raw, divergence_from_parts, integrate_step_cdfs, score_with, Method, StepSource};

/// Relative tolerance for the two routes to `D` to agree.
pub const DECOMPOSITION_TOL: f64 = 1e-9;
/// Relative tolerance for the ex-post identity.
pub const EX_POST_TOL: f64 = 1e-9;
/// Absolute tolerance for the minimization gap.
pub const GAP_TOL: f64 = 1e-10;

/// Entropy decomposition of a linear pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub pool_entropy: f64,
    pub avg_component_entropy: f64,
    pub disagreement: f64,
    /// `d(F_w, F_i)` per component, including zero-weight ones.
    pub per_component_divergence: Vec<f64>,
    pub rule: Rule,
    pub weights: Vec<f64>,
}

impl Decomposition {
    /// `D / pool entropy`, or 0 for a degenerate pool.
    pub fn disagreement_share(&self) -> f64 {
        if self.pool_entropy > 0.0 {
            (self.disagreement / self.pool_entropy).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// `|pool - avg - sum_i w_i d_i|`, the residual of the decomposition
    /// with `D` taken as the average divergence.
    pub fn identity_residual(&self) -> f64 {
        let avg_div: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.per_component_divergence)
            .map(|(w, d)| w * d)
            .collect();
        (self.pool_entropy - self.avg_component_entropy - pairwise_sum(&avg_div)).abs()
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.pool_entropy, self.avg_component_entropy, self.disagreement];
        if nonneg.iter().chain(&self.per_component_divergence).any(|v| !(*v >= 0.0)) {
            return Err(Error::Consistency {
                what: "negative decomposition term".into(),
                value: nonneg.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
        let scale = self.pool_entropy.max(1.0);
        let r1 = (self.pool_entropy - self.avg_component_entropy - self.disagreement).abs();
        let r2 = self.identity_residual();
        if r1 > DECOMPOSITION_TOL * scale || r2 > DECOMPOSITION_TOL * scale {
            return Err(Error::Consistency {
                what: "entropy decomposition residual".into(),
                value: r1.max(r2),
            });
        }
        Ok(())
    }
}

/// Decompose the pool's entropy under `spec`.
///
/// `D` is computed both as the weighted average divergence and as the
/// difference of half self-expectations; the latter is reported and the
/// two must agree to [`DECOMPOSITION_TOL`] relative.
pub fn decompose(spec: &KernelSpec, pool: &PoolSpec) -> Result<Decomposition> {
    spec.check_space(pool.space())?;
    let pooled = linear_pool(pool);
    let e_pool = cross_raw(spec, &pooled, &pooled);
    let parts: Vec<(f64, f64)> = pool
        .components()
        .par_iter()
        .map(|c| {
            let e_c = cross_raw(spec, c, c);
            let cross = if pooled.repr_cmp(c).is_gt() {
                cross_raw(spec, c, &pooled)
            } else {
                cross_raw(spec, &pooled, c)
            };
            (e_c, cross)
        })
        .collect();
    let weights = pool.weights();

    let mut per_component_divergence = Vec::with_capacity(parts.len());
    for &(e_c, cross) in &parts {
        per_component_divergence.push(divergence_from_parts(cross, e_pool, e_c)?);
    }
    let weighted_self: Vec<f64> = weights.iter().zip(&parts).map(|(w, p)| w * p.0).collect();
    let pool_entropy = clamp_nonneg(0.5 * e_pool, e_pool, "pool entropy")?;
    let avg_component_entropy = clamp_nonneg(0.5 * pairwise_sum(&weighted_self), e_pool, "average entropy")?;
    let disagreement = clamp_nonneg(pool_entropy - avg_component_entropy, e_pool, "disagreement")?;

    let weighted_div: Vec<f64> = weights
        .iter()
        .zip(&per_component_divergence)
        .map(|(w, d)| w * d)
        .collect();
    let via_divergence = pairwise_sum(&weighted_div);
    if (via_divergence - disagreement).abs() > DECOMPOSITION_TOL * pool_entropy.max(1.0) {
        return Err(Error::Consistency {
            what: "disagreement routes disagree".into(),
            value: via_divergence - disagreement,
        });
    }

    Ok(Decomposition {
        pool_entropy,
        avg_component_entropy,
        disagreement,
        per_component_divergence,
        rule: spec.rule(),
        weights: weights.to_vec(),
    })
}

/// Rule-specific closed form of `D`.
pub fn closed_form_disagreement(spec: &KernelSpec, pool: &PoolSpec) -> Result<f64> {
    spec.check_space(pool.space())?;
    let w = pool.weights();
    let comps = pool.components();
    let value = match spec.kind() {
        KernelKind::SquaredDiff | KernelKind::QuadForm(_) => {
            let means = comps
                .iter()
                .map(|c| mean_and_variance(c, None).map(|m| m.mean))
                .collect::<Result<Vec<_>>>()?;
            let dim = means[0].len();
            let mut pool_mean = vec![0.0; dim];
            for (wi, m) in w.iter().zip(&means) {
                for (acc, &x) in pool_mean.iter_mut().zip(m) {
                    *acc += wi * x;
                }
            }
            let terms: Vec<f64> = w
                .iter()
                .zip(&means)
                .map(|(wi, m)| {
                    let dist = match spec.kind() {
                        KernelKind::QuadForm(q) => q.eval(&pool_mean, m),
                        _ => (m[0] - pool_mean[0]).powi(2),
                    };
                    wi * dist
                })
                .collect();
            pairwise_sum(&terms)
        }
        KernelKind::AbsDiff => {
            let sources: Vec<StepSource<'_>> = comps
                .iter()
                .map(|c| StepSource::Sample(c.as_empirical().expect("real-line pool")))
                .collect();
            integrate_step_cdfs(&sources, |cdf| {
                let pooled: f64 = w.iter().zip(cdf).map(|(wi, f)| wi * f).sum();
                w.iter()
                    .zip(cdf)
                    .map(|(wi, f)| wi * (f - pooled) * (f - pooled))
                    .sum()
            })
        }
        KernelKind::Euclidean => {
            let pooled = linear_pool(pool);
            let self_terms: Vec<f64> = comps
                .iter()
                .zip(w)
                .map(|(c, wi)| wi * cross_raw(spec, c, c))
                .collect();
            0.5 * cross_raw(spec, &pooled, &pooled) - 0.5 * pairwise_sum(&self_terms)
        }
        KernelKind::LabelMismatch | KernelKind::OrdinalAbsDiff => {
            let cumulative = matches!(spec.kind(), KernelKind::OrdinalAbsDiff);
            let vectors: Vec<Vec<f64>> = comps
                .iter()
                .map(|c| {
                    let d = c.as_categorical().expect("categorical pool");
                    if cumulative {
                        d.cumulative()
                    } else {
                        d.probs().to_vec()
                    }
                })
                .collect();
            let k = vectors[0].len();
            let pooled: Vec<f64> = (0..k)
                .map(|l| w.iter().zip(&vectors).map(|(wi, v)| wi * v[l]).sum())
                .collect();
            let terms: Vec<f64> = w
                .iter()
                .zip(&vectors)
                .map(|(wi, v)| {
                    wi * v
                        .iter()
                        .zip(&pooled)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .collect();
            let total = pairwise_sum(&terms);
            if cumulative {
                total
            } else {
                0.5 * total
            }
        }
    };
    clamp_nonneg(value, value, "closed-form disagreement")
}

/// Ex-post comparison of the pool's score with its components' scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExPostReport {
    pub outcome: Outcome,
    pub pool_score: f64,
    pub avg_component_score: f64,
    pub per_component_score: Vec<f64>,
    pub disagreement: f64,
    /// `avg_component_score - disagreement - pool_score`.
    pub residual: f64,
    /// A second outcome used to confirm that `avg - pool` does not depend
    /// on the outcome.
    pub alt_outcome: Outcome,
    pub alt_implied_disagreement: f64,
}

impl ExPostReport {
    pub fn implied_disagreement(&self) -> f64 {
        self.avg_component_score - self.pool_score
    }
}

/// Scores of the pool and its components at `y`, checked against `D`.
pub fn ex_post_identity(spec: &KernelSpec, pool: &PoolSpec, y: &Outcome) -> Result<ExPostReport> {
    y.check_in(&spec.space())?;
    let decomposition = decompose(spec, pool)?;
    let (pool_score, per_component_score, avg_component_score) = scores_at(spec, pool, y)?;
    let residual = avg_component_score - decomposition.disagreement - pool_score;
    let tol = EX_POST_TOL * avg_component_score.abs().max(1.0);
    if residual.abs() > tol {
        return Err(Error::Consistency {
            what: "ex-post identity residual".into(),
            value: residual,
        });
    }
    let alt_outcome = alternate_outcome(spec, y);
    let (alt_pool, _, alt_avg) = scores_at(spec, pool, &alt_outcome)?;
    let alt_implied_disagreement = alt_avg - alt_pool;
    let spread = (alt_implied_disagreement - (avg_component_score - pool_score)).abs();
    if spread > EX_POST_TOL * avg_component_score.abs().max(alt_avg.abs()).max(1.0) {
        return Err(Error::Consistency {
            what: "disagreement depends on the outcome".into(),
            value: spread,
        });
    }
    Ok(ExPostReport {
        outcome: y.clone(),
        pool_score,
        avg_component_score,
        per_component_score,
        disagreement: decomposition.disagreement,
        residual,
        alt_outcome,
        alt_implied_disagreement,
    })
}

fn scores_at(spec: &KernelSpec, pool: &PoolSpec, y: &Outcome) -> Result<(f64, Vec<f64>, f64)> {
    let pooled = linear_pool(pool);
    let pool_score = score_with(spec, &pooled, y, Method::ExactPairwise)?.value;
    let per = pool
        .components()
        .iter()
        .map(|c| score_with(spec, c, y, Method::ExactPairwise).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    let weighted: Vec<f64> = pool.weights().iter().zip(&per).map(|(w, s)| w * s).collect();
    Ok((pool_score, per, pairwise_sum(&weighted)))
}

fn alternate_outcome(spec: &KernelSpec, y: &Outcome) -> Outcome {
    match y {
        Outcome::Real(x) => Outcome::Real(x + 1.0),
        Outcome::Vector(v) => {
            let mut v = v.clone();
            v[0] += 1.0;
            Outcome::Vector(v)
        }
        Outcome::Category(c) => {
            let k = spec.space().categories().unwrap_or(1);
            Outcome::Category((c + 1) % k)
        }
    }
}

/// A pool over a finite outcome set, in probability-vector form.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePool {
    matrix: KernelMatrix,
    probs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    pooled: Vec<f64>,
}

impl FinitePool {
    /// From an explicit kernel matrix. The matrix is not required to be a
    /// valid kernel, which lets invalid kernels be probed.
    pub fn from_matrix(matrix: KernelMatrix, probs: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let n = matrix.len();
        if probs.is_empty() {
            return Err(Error::EmptyPool);
        }
        if weights.len() != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: probs.len(),
                found: weights.len(),
            });
        }
        let probs = probs
            .into_iter()
            .map(|p| {
                if p.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: p.len(),
                    });
                }
                normalize_probabilities(p, "component probabilities")
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = normalize_probabilities(weights, "pool weights")?;
        let pooled = (0..n)
            .map(|j| weights.iter().zip(&probs).map(|(w, p)| w * p[j]).sum())
            .collect();
        Ok(FinitePool {
            matrix,
            probs,
            weights,
            pooled,
        })
    }

    /// A pool of categorical components; the outcome set is the categories.
    pub fn from_categorical(spec: &KernelSpec, pool: &PoolSpec) -> Result<Self> {
        spec.check_space(pool.space())?;
        let probs = pool
            .components()
            .iter()
            .map(|c| {
                c.as_categorical().map(|d| d.probs().to_vec()).ok_or_else(|| {
                    Error::Unsupported(
                        "generalized disagreement needs a finite outcome set; empirical components are not supported".into(),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FinitePool::from_matrix(spec.category_matrix()?, probs, pool.weights().to_vec())
    }

    /// Components given as probabilities over an explicit grid of outcomes.
    pub fn on_grid(spec: &KernelSpec, grid: &[Outcome], probs: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        FinitePool::from_matrix(spec.kernel_matrix(grid)?, probs, weights)
    }

    pub fn matrix(&self) -> &KernelMatrix {
        &self.matrix
    }

    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Divergence `p' L h - 1/2 h' L h - 1/2 p' L p`.
    pub fn divergence(&self, h: &[f64], p: &[f64]) -> f64 {
        let m = &self.matrix;
        m.bilinear(p, h) - 0.5 * m.quadratic(h) - 0.5 * m.quadratic(p)
    }

    /// Average divergence from the components to `h`.
    pub fn d_gen(&self, h: &[f64]) -> f64 {
        let hlh = self.matrix.quadratic(h);
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.probs)
            .map(|(w, p)| w * (self.matrix.bilinear(p, h) - 0.5 * hlh - 0.5 * self.matrix.quadratic(p)))
            .collect();
        pairwise_sum(&terms)
    }

    /// Generalized disagreement at `h`, compared with the pool.
    pub fn report(&self, h: &[f64]) -> Result<GenDisagreementReport> {
        if h.len() != self.pooled.len() {
            return Err(Error::DimensionMismatch {
                expected: self.pooled.len(),
                found: h.len(),
            });
        }
        let h = normalize_probabilities(h.to_vec(), "h")?;
        let d_gen_h = self.d_gen(&h);
        let d_gen_pool = self.d_gen(&self.pooled);
        let c: Vec<f64> = h.iter().zip(&self.pooled).map(|(a, b)| a - b).collect();
        let quadratic_identity = -0.5 * self.matrix.quadratic(&c);
        Ok(GenDisagreementReport {
            h,
            d_gen_h,
            d_gen_pool,
            gap: d_gen_h - d_gen_pool,
            quadratic_identity,
        })
    }

    /// Exhaustive search for the minimizer of `d_gen` over the simplex grid
    /// with spacing `step`.
    pub fn grid_search(&self, step: f64) -> Result<GridSearchResult> {
        let k = self.pooled.len();
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidInput(format!("grid step {step} not in (0, 1]")));
        }
        let levels = (1.0 / step).round() as usize;
        if ((levels as f64) * step - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("grid step {step} does not divide 1")));
        }
        let count = binomial(levels + k - 1, k - 1);
        if count > 10_000_000 {
            return Err(Error::Unsupported(format!(
                "simplex grid with {count} points is too large"
            )));
        }
        let mut best = GridSearchResult {
            h: Vec::new(),
            d_gen: f64::INFINITY,
            points: 0,
        };
        let mut counts = vec![0usize; k];
        let mut h = vec![0.0; k];
        self.search_rec(&mut counts, 0, levels, levels, &mut h, &mut best);
        Ok(best)
    }

    fn search_rec(
        &self,
        counts: &mut [usize],
        pos: usize,
        remaining: usize,
        levels: usize,
        h: &mut [f64],
        best: &mut GridSearchResult,
    ) {
        let k = counts.len();
        if pos == k - 1 {
            counts[pos] = remaining;
            for (hi, &c) in h.iter_mut().zip(counts.iter()) {
                *hi = c as f64 / levels as f64;
            }
            let v = self.d_gen(h);
            best.points += 1;
            if v < best.d_gen {
                best.d_gen = v;
                best.h = h.to_vec();
            }
            return;
        }
        for c in 0..=remaining {
            counts[pos] = c;
            self.search_rec(counts, pos + 1, remaining - c, levels, h, best);
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Generalized disagreement around a candidate combination `h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenDisagreementReport {
    pub h: Vec<f64>,
    pub d_gen_h: f64,
    pub d_gen_pool: f64,
    /// `d_gen_h - d_gen_pool`; nonnegative for valid kernels.
    pub gap: f64,
    /// `-1/2 (h - p)' L (h - p)` for the linear pool `p`.
    pub quadratic_identity: f64,
}

impl GenDisagreementReport {
    pub fn identity_residual(&self) -> f64 {
        (self.gap - self.quadratic_identity).abs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gap < -GAP_TOL {
            return Err(Error::Consistency {
                what: "linear pool does not minimize average divergence (gap)".into(),
                value: self.gap,
            });
        }
        if self.identity_residual() > GAP_TOL {
            return Err(Error::Consistency {
                what: "gap differs from its quadratic form".into(),
                value: self.identity_residual(),
            });
        }
        Ok(())
    }
}

/// Generalized disagreement for a categorical pool.
pub fn gen_disagreement(spec: &KernelSpec, pool: &PoolSpec, h: &[f64]) -> Result<GenDisagreementReport> {
    FinitePool::from_categorical(spec, pool)?.report(h)
}

/// Result of a simplex grid search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub h: Vec<f64>,
    pub d_gen: f64,
    pub points: usize,
}
