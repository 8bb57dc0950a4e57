//! Kernel scores, entropies and divergences.
//!
//! Every quantity reduces to expectations of the kernel under independent
//! draws from two finite distributions:
//!
//! ```text
//! S(F, y)  = E_F L(X, y) - 1/2 E_F L(X, X~)
//! H(F)     = 1/2 E_F L(X, X~)
//! d(H, F)  = E_{F,H} L(X, X~) - 1/2 E_H L(X, X~) - 1/2 E_F L(X, X~)
//! ```
//!
//! The generic path evaluates these as exact weighted double sums. Each
//! named rule also has a closed form (except the energy score), used by
//! default for scores and entropies. Monte Carlo estimation is available for
//! supports too large for exact sums.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{mean_and_variance, EmpiricalDist, ForecastDistribution, Outcome};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelSpec, Rule};
use crate::numeric::{clamp_nonneg, pairwise_sum};

/// Support-size product above which exact double sums are parallelized.
const PAR_PAIRS: usize = 1 << 15;

/// Draws per Monte Carlo chunk; each chunk gets its own generator stream.
const MC_CHUNK: usize = 8192;

/// Default pair count above which an [`ExpectationPolicy`] with Monte Carlo
/// enabled switches away from exact summation.
pub const DEFAULT_MC_PAIR_THRESHOLD: u64 = 100_000_000;

/// How a value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    ExactPairwise,
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreValue {
    pub value: f64,
    pub rule: Rule,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyValue {
    pub value: f64,
    pub rule: Rule,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceValue {
    pub value: f64,
    pub rule: Rule,
    pub method: Method,
}

/// Whether `rule` has a closed form for scores and entropies.
pub fn has_closed_form(rule: Rule) -> bool {
    rule != Rule::Es
}

fn check_dist(spec: &KernelSpec, f: &ForecastDistribution) -> Result<()> {
    spec.check_space(f.space())
}

fn ordered<'a>(
    f: &'a ForecastDistribution,
    h: &'a ForecastDistribution,
) -> (&'a ForecastDistribution, &'a ForecastDistribution) {
    if f.repr_cmp(h).is_gt() {
        (h, f)
    } else {
        (f, h)
    }
}

/// `E_{F,H} L(X, X~)` as an exact double sum over both supports.
///
/// Symmetric in `f` and `h` bitwise: arguments are put in a canonical order
/// before summing.
pub fn cross_expectation(spec: &KernelSpec, f: &ForecastDistribution, h: &ForecastDistribution) -> Result<f64> {
    check_dist(spec, f)?;
    check_dist(spec, h)?;
    let (a, b) = ordered(f, h);
    Ok(cross_raw(spec, a, b))
}

/// `E_F L(X, X~)` for two independent draws from `f`.
pub fn self_expectation(spec: &KernelSpec, f: &ForecastDistribution) -> Result<f64> {
    check_dist(spec, f)?;
    Ok(cross_raw(spec, f, f))
}

pub(crate) fn cross_raw(spec: &KernelSpec, f: &ForecastDistribution, h: &ForecastDistribution) -> f64 {
    match (f, h) {
        (ForecastDistribution::Categorical(a), ForecastDistribution::Categorical(b)) => {
            let (p, q) = (a.probs(), b.probs());
            let rows: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    if pj == 0.0 {
                        return 0.0;
                    }
                    let terms: Vec<f64> = q
                        .iter()
                        .enumerate()
                        .map(|(l, &ql)| ql * spec.eval_categories(j, l))
                        .collect();
                    pj * pairwise_sum(&terms)
                })
                .collect();
            pairwise_sum(&rows)
        }
        (ForecastDistribution::Empirical(a), ForecastDistribution::Empirical(b)) => {
            empirical_cross(spec, a, b)
        }
        _ => unreachable!("representations share a space"),
    }
}

fn empirical_cross(spec: &KernelSpec, a: &EmpiricalDist, b: &EmpiricalDist) -> f64 {
    let row = |buf: &mut Vec<f64>, j: usize| -> f64 {
        let wj = a.weights()[j];
        if wj == 0.0 {
            return 0.0;
        }
        let x = a.point(j);
        buf.clear();
        buf.extend(b.iter().map(|(y, v)| v * spec.eval_coords(x, y)));
        wj * pairwise_sum(buf)
    };
    let rows: Vec<f64> = if a.len().saturating_mul(b.len()) >= PAR_PAIRS {
        (0..a.len())
            .into_par_iter()
            .map_init(|| Vec::with_capacity(b.len()), |buf, j| row(buf, j))
            .collect()
    } else {
        let mut buf = Vec::with_capacity(b.len());
        (0..a.len()).map(|j| row(&mut buf, j)).collect()
    };
    pairwise_sum(&rows)
}

/// `E_F L(X, y)`.
pub fn expected_kernel_at(spec: &KernelSpec, f: &ForecastDistribution, y: &Outcome) -> Result<f64> {
    check_dist(spec, f)?;
    y.check_in(&spec.space())?;
    Ok(at_raw(spec, f, y))
}

fn at_raw(spec: &KernelSpec, f: &ForecastDistribution, y: &Outcome) -> f64 {
    match (f, y) {
        (ForecastDistribution::Categorical(d), Outcome::Category(c)) => {
            let terms: Vec<f64> = d
                .probs()
                .iter()
                .enumerate()
                .map(|(j, &p)| p * spec.eval_categories(j, *c))
                .collect();
            pairwise_sum(&terms)
        }
        (ForecastDistribution::Empirical(d), y) => {
            let y = y.coords().expect("checked real outcome");
            let terms: Vec<f64> = d.iter().map(|(x, w)| w * spec.eval_coords(x, y)).collect();
            pairwise_sum(&terms)
        }
        _ => unreachable!("outcome checked against space"),
    }
}

/// Score of `f` at outcome `y`, using the closed form where one exists.
pub fn score(spec: &KernelSpec, f: &ForecastDistribution, y: &Outcome) -> Result<ScoreValue> {
    let method = if has_closed_form(spec.rule()) {
        Method::ClosedForm
    } else {
        Method::ExactPairwise
    };
    score_with(spec, f, y, method)
}

/// Score of `f` at `y` along a chosen evaluation path.
pub fn score_with(spec: &KernelSpec, f: &ForecastDistribution, y: &Outcome, method: Method) -> Result<ScoreValue> {
    check_dist(spec, f)?;
    y.check_in(&spec.space())?;
    let value = match method {
        Method::ExactPairwise => {
            let at = at_raw(spec, f, y);
            let half_self = 0.5 * cross_raw(spec, f, f);
            clamp_nonneg(at - half_self, at, "score")?
        }
        Method::ClosedForm => closed_form_score(spec, f, y)?,
        Method::MonteCarlo { .. } => {
            return Err(Error::Unsupported(
                "scores are exact; use monte_carlo_expectation for estimates".into(),
            ))
        }
    };
    Ok(ScoreValue {
        value,
        rule: spec.rule(),
        method,
    })
}

fn closed_form_score(spec: &KernelSpec, f: &ForecastDistribution, y: &Outcome) -> Result<f64> {
    match (spec.kind(), f, y) {
        (KernelKind::SquaredDiff, ForecastDistribution::Empirical(_), y) => {
            let mu = mean_and_variance(f, None)?.mean[0];
            let d = y.coords().expect("checked")[0] - mu;
            Ok(d * d)
        }
        (KernelKind::QuadForm(q), ForecastDistribution::Empirical(_), y) => {
            let mu = mean_and_variance(f, None)?.mean;
            Ok(q.eval(&mu, y.coords().expect("checked")))
        }
        (KernelKind::AbsDiff, ForecastDistribution::Empirical(d), y) => {
            Ok(crps_cdf_form(d, y.coords().expect("checked")[0]))
        }
        (KernelKind::LabelMismatch, ForecastDistribution::Categorical(d), Outcome::Category(c)) => {
            let terms: Vec<f64> = d
                .probs()
                .iter()
                .enumerate()
                .map(|(l, &p)| {
                    let e = if l == *c { p - 1.0 } else { p };
                    e * e
                })
                .collect();
            Ok(0.5 * pairwise_sum(&terms))
        }
        (KernelKind::OrdinalAbsDiff, ForecastDistribution::Categorical(d), Outcome::Category(c)) => {
            let terms: Vec<f64> = d
                .cumulative()
                .iter()
                .enumerate()
                .map(|(l, &cum)| {
                    let e = if l >= *c { cum - 1.0 } else { cum };
                    e * e
                })
                .collect();
            Ok(pairwise_sum(&terms))
        }
        (KernelKind::Euclidean, _, _) => Err(Error::Unsupported(
            "the energy score has no closed form".into(),
        )),
        _ => unreachable!("space checked"),
    }
}

/// Entropy `1/2 E_F L(X, X~)`, using the closed form where one exists.
pub fn entropy(spec: &KernelSpec, f: &ForecastDistribution) -> Result<EntropyValue> {
    let method = if has_closed_form(spec.rule()) {
        Method::ClosedForm
    } else {
        Method::ExactPairwise
    };
    entropy_with(spec, f, method)
}

pub fn entropy_with(spec: &KernelSpec, f: &ForecastDistribution, method: Method) -> Result<EntropyValue> {
    check_dist(spec, f)?;
    let value = match method {
        Method::ExactPairwise => 0.5 * cross_raw(spec, f, f),
        Method::ClosedForm => closed_form_entropy(spec, f)?,
        Method::MonteCarlo { .. } => {
            return Err(Error::Unsupported(
                "entropies are exact; use monte_carlo_expectation for estimates".into(),
            ))
        }
    };
    Ok(EntropyValue {
        value: clamp_nonneg(value, value, "entropy")?,
        rule: spec.rule(),
        method,
    })
}

fn closed_form_entropy(spec: &KernelSpec, f: &ForecastDistribution) -> Result<f64> {
    match (spec.kind(), f) {
        (KernelKind::SquaredDiff, ForecastDistribution::Empirical(_)) => {
            Ok(mean_and_variance(f, None)?.variance())
        }
        (KernelKind::QuadForm(q), ForecastDistribution::Empirical(_)) => {
            // 1/2 E (X~ - X)' A (X~ - X) = tr(A Cov).
            let cov = mean_and_variance(f, None)?.covariance;
            let n = q.dim();
            let mut terms = Vec::with_capacity(n * n);
            for (a, row) in cov.iter().enumerate() {
                for (b, &c) in row.iter().enumerate() {
                    terms.push(q.entry(a, b) * c);
                }
            }
            Ok(pairwise_sum(&terms))
        }
        (KernelKind::AbsDiff, ForecastDistribution::Empirical(d)) => Ok(integrate_step_cdfs(
            &[StepSource::Sample(d)],
            |cdf| cdf[0] * (1.0 - cdf[0]),
        )),
        (KernelKind::LabelMismatch, ForecastDistribution::Categorical(d)) => {
            let terms: Vec<f64> = d.probs().iter().map(|&p| p * (1.0 - p)).collect();
            Ok(0.5 * pairwise_sum(&terms))
        }
        (KernelKind::OrdinalAbsDiff, ForecastDistribution::Categorical(d)) => {
            let terms: Vec<f64> = d.cumulative().iter().map(|&c| c * (1.0 - c)).collect();
            Ok(pairwise_sum(&terms))
        }
        (KernelKind::Euclidean, _) => Err(Error::Unsupported(
            "the energy score has no closed-form entropy".into(),
        )),
        _ => unreachable!("space checked"),
    }
}

/// Score divergence `d(H, F)`. Exactly symmetric in its arguments.
pub fn divergence(spec: &KernelSpec, h: &ForecastDistribution, f: &ForecastDistribution) -> Result<DivergenceValue> {
    check_dist(spec, h)?;
    check_dist(spec, f)?;
    let (a, b) = ordered(h, f);
    let cross = cross_raw(spec, a, b);
    let value = divergence_from_parts(cross, cross_raw(spec, a, a), cross_raw(spec, b, b))?;
    Ok(DivergenceValue {
        value,
        rule: spec.rule(),
        method: Method::ExactPairwise,
    })
}

/// `cross - (self_a + self_b) / 2`, clamped.
pub(crate) fn divergence_from_parts(cross: f64, self_a: f64, self_b: f64) -> Result<f64> {
    clamp_nonneg(cross - 0.5 * (self_a + self_b), cross, "divergence")
}

/// CRPS through its CDF-integral representation,
/// `int (1(z >= y) - F(z))^2 dz`.
pub fn crps_cdf_form(f: &EmpiricalDist, y: f64) -> f64 {
    integrate_step_cdfs(&[StepSource::Sample(f), StepSource::Point(y)], |c| {
        let d = c[1] - c[0];
        d * d
    })
}

/// Cramer distance `int (F(z) - H(z))^2 dz` between univariate samples.
pub fn cramer_distance(f: &EmpiricalDist, h: &EmpiricalDist) -> f64 {
    integrate_step_cdfs(&[StepSource::Sample(f), StepSource::Sample(h)], |c| {
        let d = c[1] - c[0];
        d * d
    })
}

/// A univariate step CDF.
pub(crate) enum StepSource<'a> {
    Sample(&'a EmpiricalDist),
    Point(f64),
}

/// Integrate `g(F_1(z), ..., F_n(z))` over the real line for step CDFs.
///
/// The pooled support is sorted once; tied points collapse into a single
/// jump before the next gap is integrated. `g` must vanish when all CDFs are
/// 0 or all are 1.
pub(crate) fn integrate_step_cdfs(sources: &[StepSource<'_>], g: impl Fn(&[f64]) -> f64) -> f64 {
    let mut events: Vec<(f64, usize, f64)> = Vec::new();
    for (s, src) in sources.iter().enumerate() {
        match src {
            StepSource::Sample(d) => {
                events.extend(d.points_flat().iter().zip(d.weights()).map(|(&x, &w)| (x, s, w)));
            }
            StepSource::Point(y) => events.push((*y, s, 1.0)),
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cdf = vec![0.0; sources.len()];
    let mut terms = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let x = events[i].0;
        while i < events.len() && events[i].0 == x {
            cdf[events[i].1] += events[i].2;
            i += 1;
        }
        if i < events.len() {
            let gap = events[i].0 - x;
            terms.push(g(&cdf) * gap);
        }
    }
    pairwise_sum(&terms)
}

/// Monte Carlo estimate of a cross-expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
    pub seed: u64,
}

/// Estimate `E_{F,H} L(X, X~)` from `draws` independent pairs.
///
/// Draws are split into fixed chunks; chunk `c` uses a ChaCha8 generator
/// seeded with `seed` on stream `c`, so the estimate is identical for any
/// thread count.
pub fn monte_carlo_expectation(
    spec: &KernelSpec,
    f: &ForecastDistribution,
    h: &ForecastDistribution,
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_dist(spec, f)?;
    check_dist(spec, h)?;
    if draws < 2 {
        return Err(Error::InvalidInput("Monte Carlo needs at least two draws".into()));
    }
    let wf = sampler(f)?;
    let wh = sampler(h)?;
    let chunks = draws.div_ceil(MC_CHUNK);
    let values: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(draws - c * MC_CHUNK);
            (0..n)
                .map(|_| {
                    let j = wf.sample(&mut rng);
                    let l = wh.sample(&mut rng);
                    pair_kernel(spec, f, j, h, l)
                })
                .collect()
        })
        .collect();
    let values = values.concat();
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        draws,
        seed,
    })
}

fn sampler(f: &ForecastDistribution) -> Result<WeightedIndex<f64>> {
    let w = match f {
        ForecastDistribution::Categorical(d) => d.probs(),
        ForecastDistribution::Empirical(d) => d.weights(),
    };
    WeightedIndex::new(w).map_err(|e| Error::InvalidInput(format!("cannot sample: {e}")))
}

fn pair_kernel(spec: &KernelSpec, f: &ForecastDistribution, j: usize, h: &ForecastDistribution, l: usize) -> f64 {
    match (f, h) {
        (ForecastDistribution::Categorical(_), ForecastDistribution::Categorical(_)) => {
            spec.eval_categories(j, l)
        }
        (ForecastDistribution::Empirical(a), ForecastDistribution::Empirical(b)) => {
            spec.eval_coords(a.point(j), b.point(l))
        }
        _ => unreachable!("representations share a space"),
    }
}

/// Exact-or-sampled evaluation policy for large supports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationPolicy {
    /// Pair count above which Monte Carlo is used, if enabled.
    pub pair_threshold: u64,
    /// `(draws, seed)`; `None` keeps every evaluation exact.
    pub monte_carlo: Option<(usize, u64)>,
}

impl Default for ExpectationPolicy {
    fn default() -> Self {
        ExpectationPolicy {
            pair_threshold: DEFAULT_MC_PAIR_THRESHOLD,
            monte_carlo: None,
        }
    }
}

/// A cross-expectation together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expectation {
    pub value: f64,
    /// Zero for exact evaluation.
    pub std_error: f64,
    pub method: Method,
}

/// Cross-expectation under `policy`.
pub fn expectation(
    spec: &KernelSpec,
    f: &ForecastDistribution,
    h: &ForecastDistribution,
    policy: &ExpectationPolicy,
) -> Result<Expectation> {
    let pairs = (f.support_len() as u64).saturating_mul(h.support_len() as u64);
    match policy.monte_carlo {
        Some((draws, seed)) if pairs > policy.pair_threshold => {
            let mc = monte_carlo_expectation(spec, f, h, draws, seed)?;
            Ok(Expectation {
                value: mc.estimate,
                std_error: mc.std_error,
                method: Method::MonteCarlo { draws, seed },
            })
        }
        _ => Ok(Expectation {
            value: cross_expectation(spec, f, h)?,
            std_error: 0.0,
            method: Method::ExactPairwise,
        }),
    }
}
