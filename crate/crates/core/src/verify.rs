//! Randomized checks of the decomposition identities.
//!
//! Fixtures are drawn from ChaCha8 streams keyed by instance index, so a
//! suite run is reproducible and independent of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{CategoricalDist, EmpiricalDist, ForecastDistribution, Outcome, OutcomeSpace, PoolSpec};
use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, KernelSpec, Rule};
use crate::numeric::rel_diff;
use crate::pooling::{
    closed_form_disagreement, decompose, FinitePool, DECOMPOSITION_TOL, EX_POST_TOL, GAP_TOL,
};
use crate::scoring::{crps_cdf_form, score_with, Method};

/// Tolerance for kernel-form against CDF-form CRPS.
pub const CRPS_DUAL_TOL: f64 = 1e-10;
/// Random `h` per finite-space fixture in the pool-minimizes-divergence check.
pub const H_PER_FIXTURE: usize = 50;

/// A random pool with outcomes to score it at.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: KernelSpec,
    pub pool: PoolSpec,
    pub outcomes: Vec<Outcome>,
}

/// Random probability vector, Dirichlet(1, ..., 1).
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Random symmetric positive definite matrix `B'B + 0.1 I`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let s: f64 = (0..dim).map(|r| b[r][i] * b[r][j]).sum();
                    if i == j {
                        s + 0.1
                    } else {
                        s
                    }
                })
                .collect()
        })
        .collect()
}

fn random_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w = random_simplex(rng, n);
    if n > 1 && rng.random_bool(0.1) {
        w[rng.random_range(0..n)] = 0.0;
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
    }
    w
}

fn random_point<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64, tied: bool) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            if tied {
                (x * 2.0).round()
            } else {
                x * scale
            }
        })
        .collect()
}

fn random_empirical<R: Rng + ?Sized>(rng: &mut R, space: OutcomeSpace, dim: usize) -> Result<ForecastDistribution> {
    let m = rng.random_range(1..=50);
    let scale = rng.random_range(0.1..10.0);
    let tied = rng.random_bool(0.3);
    let shift = rng.random_range(-5.0..5.0);
    let points = (0..m)
        .map(|_| {
            let mut p = random_point(rng, dim, scale, tied);
            p.iter_mut().for_each(|x| *x += shift);
            p
        })
        .collect();
    let weights = if rng.random_bool(0.5) {
        vec![1.0 / m as f64; m]
    } else {
        random_weights(rng, m)
    };
    Ok(EmpiricalDist::new(space, points, weights)?.into())
}

fn random_categorical<R: Rng + ?Sized>(rng: &mut R, space: OutcomeSpace, k: usize) -> Result<ForecastDistribution> {
    let mut p = random_simplex(rng, k);
    if rng.random_bool(0.2) {
        p[rng.random_range(0..k)] = 0.0;
        if p.iter().all(|&x| x == 0.0) {
            p[0] = 1.0;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(CategoricalDist::new(space, p)?.into())
}

fn random_outcome<R: Rng + ?Sized>(rng: &mut R, spec: &KernelSpec, pool: &PoolSpec) -> Outcome {
    match spec.space() {
        OutcomeSpace::UnorderedCategories { k } | OutcomeSpace::OrderedCategories { k } => {
            Outcome::Category(rng.random_range(0..k))
        }
        space => {
            let dim = space.dim().unwrap_or(1);
            // Half the outcomes land on a support point.
            let comp = &pool.components()[rng.random_range(0..pool.len())];
            let y = match comp.as_empirical() {
                Some(e) if rng.random_bool(0.5) => e.point(rng.random_range(0..e.len())).to_vec(),
                _ => random_point(rng, dim, 5.0, false),
            };
            match space {
                OutcomeSpace::RealLine => Outcome::Real(y[0]),
                _ => Outcome::Vector(y),
            }
        }
    }
}

/// A random pool under `rule`: 1 to 6 components, categorical `k` in
/// 2..=10, or empirical supports of 1 to 50 points in dimension 1 to 4.
pub fn random_fixture<R: Rng + ?Sized>(rng: &mut R, rule: Rule, outcomes: usize) -> Result<Fixture> {
    let n = rng.random_range(1..=6);
    let spec = match rule {
        Rule::Se => KernelSpec::squared_error(),
        Rule::Crps => KernelSpec::crps(),
        Rule::Es => KernelSpec::energy(rng.random_range(1..=4))?,
        Rule::Mse => {
            let dim = rng.random_range(1..=4);
            KernelSpec::quad_form(random_spd(rng, dim))?
        }
        Rule::Brier => KernelSpec::brier(rng.random_range(2..=10))?,
        Rule::Rps => KernelSpec::rps(rng.random_range(2..=10))?,
    };
    let space = spec.space();
    let components = (0..n)
        .map(|_| match space {
            OutcomeSpace::UnorderedCategories { k } | OutcomeSpace::OrderedCategories { k } => {
                random_categorical(rng, space, k)
            }
            _ => random_empirical(rng, space, space.dim().unwrap_or(1)),
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = PoolSpec::new(components, random_weights(rng, n))?;
    let outcomes = (0..outcomes).map(|_| random_outcome(rng, &spec, &pool)).collect();
    Ok(Fixture { spec, pool, outcomes })
}

/// A pool over a finite outcome set with its kernel matrix.
///
/// Brier and RPS use the categories; the quadratic-form kernel uses a
/// random grid of up to 10 points in dimension 1 to 3.
pub fn random_finite_pool<R: Rng + ?Sized>(rng: &mut R, rule: Rule) -> Result<FinitePool> {
    let n = rng.random_range(1..=6);
    let matrix = match rule {
        Rule::Brier | Rule::Rps => KernelSpec::for_rule(rule, rng.random_range(2..=10), None)?.category_matrix()?,
        Rule::Mse => {
            let dim = rng.random_range(1..=3);
            let spec = KernelSpec::quad_form(random_spd(rng, dim))?;
            let grid: Vec<Outcome> = (0..rng.random_range(2..=10))
                .map(|_| Outcome::Vector(random_point(rng, dim, 2.0, false)))
                .collect();
            spec.kernel_matrix(&grid)?
        }
        other => {
            return Err(Error::Unsupported(format!(
                "finite-pool fixtures are built for brier, rps and mse, not {other}"
            )))
        }
    };
    let size = matrix.len();
    let probs = (0..n).map(|_| random_simplex(rng, size)).collect();
    FinitePool::from_matrix(matrix, probs, random_weights(rng, n))
}

/// The quartic kernel `(x - y)^4` on `0, 1, ..., n - 1`: symmetric with
/// zero diagonal, but not conditionally negative definite.
pub fn broken_kernel_matrix(n: usize) -> KernelMatrix {
    KernelMatrix::from_fn(n, |j, l| (j as f64 - l as f64).powi(4))
}

/// Max residual and pass/fail for one property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub cases: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// First failure, if any.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }
}

#[derive(Default)]
struct Tally {
    cases: usize,
    max: f64,
    failure: Option<String>,
}

impl Tally {
    fn record(&mut self, residual: f64, tol: f64, context: impl FnOnce() -> String) {
        self.cases += 1;
        if residual.is_nan() || residual > self.max {
            self.max = if residual.is_nan() { f64::NAN } else { residual };
        }
        if (residual.is_nan() || residual > tol) && self.failure.is_none() {
            self.failure = Some(format!("{} (residual {residual:e})", context()));
        }
    }

    fn fail(&mut self, msg: String) {
        self.cases += 1;
        if self.failure.is_none() {
            self.failure = Some(msg);
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.cases += other.cases;
        if other.max.is_nan() || other.max > self.max {
            self.max = other.max;
        }
        if self.failure.is_none() {
            self.failure = other.failure;
        }
        self
    }

    fn finish(self, name: &str, tol: f64) -> PropertyResult {
        PropertyResult {
            name: name.to_string(),
            cases: self.cases,
            max_residual: self.max,
            tolerance: tol,
            passed: self.failure.is_none(),
            detail: self.failure,
        }
    }
}

const PROPERTIES: [(&str, f64); 6] = [
    ("entropy_decomposition", DECOMPOSITION_TOL),
    ("ex_post_identity", EX_POST_TOL),
    ("outcome_independence", EX_POST_TOL),
    ("closed_form_disagreement", DECOMPOSITION_TOL),
    ("crps_dual", CRPS_DUAL_TOL),
    ("pool_minimizes_divergence", GAP_TOL),
];

fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn check_instance(index: usize, seed: u64, inject_broken: bool) -> [Tally; 6] {
    let mut t: [Tally; 6] = Default::default();
    let mut rng = instance_rng(seed, index);
    let rule = Rule::ALL[index % Rule::ALL.len()];
    let ctx = |what: &str| format!("instance {index} ({rule}): {what}");
    let fixture = match random_fixture(&mut rng, rule, 5) {
        Ok(f) => f,
        Err(e) => {
            t[0].fail(ctx(&format!("fixture generation failed: {e}")));
            return t;
        }
    };
    let Fixture { spec, pool, outcomes } = &fixture;

    // Entropy decomposition, both routes.
    let d = match decompose(spec, pool) {
        Ok(d) => d,
        Err(e) => {
            t[0].fail(ctx(&e.to_string()));
            return t;
        }
    };
    let scale = d.pool_entropy.max(1.0);
    let r1 = (d.pool_entropy - d.avg_component_entropy - d.disagreement).abs() / scale;
    let r2 = d.identity_residual() / scale;
    t[0].record(r1.max(r2), DECOMPOSITION_TOL, || ctx("entropy decomposition"));

    // Ex-post identity at each outcome.
    let pooled = crate::distributions::linear_pool(pool);
    let mut implied = Vec::new();
    for y in outcomes {
        let scores: Result<(f64, Vec<f64>)> = (|| {
            let s_pool = score_with(spec, &pooled, y, Method::ExactPairwise)?.value;
            let per = pool
                .components()
                .iter()
                .map(|c| score_with(spec, c, y, Method::ExactPairwise).map(|s| s.value))
                .collect::<Result<Vec<_>>>()?;
            Ok((s_pool, per))
        })();
        match scores {
            Ok((s_pool, per)) => {
                let avg: f64 = pool.weights().iter().zip(&per).map(|(w, s)| w * s).sum();
                let r = (avg - d.disagreement - s_pool).abs() / avg.abs().max(1.0);
                t[1].record(r, EX_POST_TOL, || ctx(&format!("ex-post identity at {y:?}")));
                implied.push((avg - s_pool, avg.abs().max(1.0)));
            }
            Err(e) => t[1].fail(ctx(&e.to_string())),
        }
    }
    for pair in implied.windows(2) {
        let r = (pair[0].0 - pair[1].0).abs() / pair[0].1.max(pair[1].1);
        t[2].record(r, EX_POST_TOL, || ctx("implied disagreement varies with outcome"));
    }

    // Closed form against the generic path.
    match closed_form_disagreement(spec, pool) {
        Ok(cf) => {
            let r = (cf - d.disagreement).abs() / d.pool_entropy.max(1.0);
            t[3].record(r, DECOMPOSITION_TOL, || ctx("closed form"));
        }
        Err(e) => t[3].fail(ctx(&e.to_string())),
    }

    // CRPS kernel form against the CDF integral.
    if rule == Rule::Crps {
        for c in pool.components() {
            let e = c.as_empirical().expect("crps fixtures are empirical");
            for y in outcomes {
                let x = match y {
                    Outcome::Real(x) => *x,
                    _ => unreachable!("real-line outcome"),
                };
                match score_with(spec, c, y, Method::ExactPairwise) {
                    Ok(s) => {
                        let r = rel_diff(s.value, crps_cdf_form(e, x));
                        t[4].record(r, CRPS_DUAL_TOL, || ctx("crps dual"));
                    }
                    Err(err) => t[4].fail(ctx(&err.to_string())),
                }
            }
        }
    }

    // Minimization over a finite outcome set.
    if matches!(rule, Rule::Brier | Rule::Rps | Rule::Mse) {
        match random_finite_pool(&mut rng, rule) {
            Ok(fp) => check_gaps(&mut t[5], &fp, &mut rng, H_PER_FIXTURE, &ctx("generalized disagreement")),
            Err(e) => t[5].fail(ctx(&e.to_string())),
        }
    }
    if inject_broken && index == 0 {
        let n = 5;
        let probs = (0..3).map(|_| random_simplex(&mut rng, n)).collect();
        match FinitePool::from_matrix(broken_kernel_matrix(n), probs, vec![1.0 / 3.0; 3]) {
            Ok(fp) => check_gaps(&mut t[5], &fp, &mut rng, 1000, "injected quartic kernel"),
            Err(e) => t[5].fail(format!("injected quartic kernel: {e}")),
        }
    }
    t
}

fn check_gaps(tally: &mut Tally, fp: &FinitePool, rng: &mut ChaCha8Rng, draws: usize, what: &str) {
    let n = fp.pooled().len();
    for _ in 0..draws {
        let h = random_simplex(rng, n);
        match fp.report(&h) {
            Ok(r) => {
                let residual = (-r.gap).max(r.identity_residual());
                tally.record(residual, GAP_TOL, || format!("{what}: gap {:e}", r.gap));
            }
            Err(e) => tally.fail(format!("{what}: {e}")),
        }
    }
}

/// Run every property over `instances` random instances, cycling through
/// the six rules. With `inject_broken`, a quartic-kernel pool is added to
/// the minimization property, which must then fail.
pub fn run_suite(instances: usize, seed: u64, inject_broken: bool) -> SuiteReport {
    let tallies = (0..instances)
        .into_par_iter()
        .map(|i| check_instance(i, seed, inject_broken))
        .reduce(
            || Default::default(),
            |a, b| {
                let [a0, a1, a2, a3, a4, a5] = a;
                let [b0, b1, b2, b3, b4, b5] = b;
                [a0.merge(b0), a1.merge(b1), a2.merge(b2), a3.merge(b3), a4.merge(b4), a5.merge(b5)]
            },
        );
    let properties = tallies
        .into_iter()
        .zip(PROPERTIES)
        .map(|(t, (name, tol))| t.finish(name, tol))
        .collect();
    SuiteReport {
        instances,
        seed,
        properties,
    }
}
