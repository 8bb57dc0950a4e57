//! Negative definite kernels `L` behind the six scoring rules.
//!
//! | rule  | kernel                    | space               |
//! |-------|---------------------------|---------------------|
//! | SE    | `(y - x)^2`               | real line           |
//! | MSE   | `(y - x)' A (y - x)`      | real vectors        |
//! | CRPS  | `|y - x|`                 | real line           |
//! | ES    | `||y - x||`               | real vectors        |
//! | Brier | `1(y != x)`               | unordered categories|
//! | RPS   | `|rank(y) - rank(x)|`     | ordered categories  |

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Outcome, OutcomeSpace};
use crate::error::{Error, Result};

/// Threshold on `c' L c` above which a kernel matrix is declared not
/// conditionally negative definite.
pub const NEG_DEF_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;
const PIVOT_REL_TOL: f64 = 1e-12;

/// The six named scoring rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Se,
    Mse,
    Crps,
    Es,
    Brier,
    Rps,
}

impl Rule {
    pub const ALL: [Rule; 6] = [Rule::Se, Rule::Mse, Rule::Crps, Rule::Es, Rule::Brier, Rule::Rps];

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Se => "se",
            Rule::Mse => "mse",
            Rule::Crps => "crps",
            Rule::Es => "es",
            Rule::Brier => "brier",
            Rule::Rps => "rps",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown rule '{s}'")))
    }
}

/// Symmetric positive definite matrix `A` with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    dim: usize,
    a: Vec<f64>,
    /// Lower-triangular `G` with `G G' = A`, row-major.
    chol: Vec<f64>,
}

impl QuadForm {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidKernel("quad-form matrix is empty".into()));
        }
        let mut a = Vec::with_capacity(dim * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidKernel(format!(
                    "quad-form matrix row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidKernel(format!("quad-form matrix row {i} is not finite")));
            }
            a.extend_from_slice(r);
        }
        let mut asym = 0.0f64;
        for i in 0..dim {
            for j in 0..i {
                asym = asym.max((a[i * dim + j] - a[j * dim + i]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidKernel(format!(
                "quad-form matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let chol = cholesky(&a, dim)?;
        Ok(QuadForm { dim, a, chol })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        QuadForm::new(
            (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `G' x`, the coordinates in which the quadratic form is squared
    /// Euclidean distance.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|j| (j..n).map(|i| self.chol[i * n + j] * x[i]).sum())
            .collect()
    }

    /// `d' A d` for `d = y - x`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        // ||G'(y - x)||^2: symmetric in (x, y) bitwise and never negative.
        let n = self.dim;
        let mut total = 0.0;
        for j in 0..n {
            let mut s = 0.0;
            for i in j..n {
                s += self.chol[i * n + j] * (y[i] - x[i]);
            }
            total += s * s;
        }
        total
    }

    /// `d' A d` for an arbitrary vector.
    pub fn norm_sq(&self, d: &[f64]) -> f64 {
        let zeros = vec![0.0; self.dim];
        self.eval(&zeros, d)
    }
}

fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(f64::NEG_INFINITY, f64::max);
    if max_diag <= 0.0 {
        return Err(Error::InvalidKernel("quad-form matrix is not positive definite".into()));
    }
    let threshold = PIVOT_REL_TOL * max_diag;
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= g[j * n + k] * g[j * n + k];
        }
        if d <= threshold {
            return Err(Error::InvalidKernel(format!(
                "quad-form matrix is not positive definite (pivot {j} = {d:e})"
            )));
        }
        let djj = d.sqrt();
        g[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            g[i * n + j] = s / djj;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    SquaredDiff,
    QuadForm(QuadForm),
    AbsDiff,
    Euclidean,
    LabelMismatch,
    OrdinalAbsDiff,
}

/// A kernel together with the outcome space it is declared on.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    kind: KernelKind,
    space: OutcomeSpace,
}

impl KernelSpec {
    /// Squared error on the real line.
    pub fn squared_error() -> Self {
        KernelSpec {
            kind: KernelKind::SquaredDiff,
            space: OutcomeSpace::RealLine,
        }
    }

    /// CRPS on the real line.
    pub fn crps() -> Self {
        KernelSpec {
            kind: KernelKind::AbsDiff,
            space: OutcomeSpace::RealLine,
        }
    }

    /// Energy score (exponent 1) on `R^dim`.
    pub fn energy(dim: usize) -> Result<Self> {
        Ok(KernelSpec {
            kind: KernelKind::Euclidean,
            space: OutcomeSpace::real_vector(dim)?,
        })
    }

    /// Multivariate squared error weighted by the SPD matrix `a`.
    pub fn quad_form(a: Vec<Vec<f64>>) -> Result<Self> {
        let q = QuadForm::new(a)?;
        let space = OutcomeSpace::real_vector(q.dim())?;
        Ok(KernelSpec {
            kind: KernelKind::QuadForm(q),
            space,
        })
    }

    pub fn brier(k: usize) -> Result<Self> {
        Ok(KernelSpec {
            kind: KernelKind::LabelMismatch,
            space: OutcomeSpace::unordered(k)?,
        })
    }

    pub fn rps(k: usize) -> Result<Self> {
        Ok(KernelSpec {
            kind: KernelKind::OrdinalAbsDiff,
            space: OutcomeSpace::ordered(k)?,
        })
    }

    /// Build the kernel for `rule` on a space of the given size.
    ///
    /// `size` is the dimension for real spaces and the category count for
    /// categorical ones; `a` is required for MSE and rejected otherwise.
    pub fn for_rule(rule: Rule, size: usize, a: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if a.is_some() && rule != Rule::Mse {
            return Err(Error::InvalidKernel(format!("rule {rule} takes no matrix")));
        }
        match rule {
            Rule::Se | Rule::Crps if size != 1 => Err(Error::InvalidKernel(format!(
                "rule {rule} is univariate, got dimension {size}"
            ))),
            Rule::Se => Ok(KernelSpec::squared_error()),
            Rule::Crps => Ok(KernelSpec::crps()),
            Rule::Es => KernelSpec::energy(size),
            Rule::Mse => {
                let a = match a {
                    Some(a) => a,
                    None => QuadForm::identity(size)?.rows(),
                };
                let spec = KernelSpec::quad_form(a)?;
                if spec.space.dim() != Some(size) {
                    return Err(Error::DimensionMismatch {
                        expected: size,
                        found: spec.space.dim().unwrap_or(0),
                    });
                }
                Ok(spec)
            }
            Rule::Brier => KernelSpec::brier(size),
            Rule::Rps => KernelSpec::rps(size),
        }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn space(&self) -> OutcomeSpace {
        self.space
    }

    pub fn rule(&self) -> Rule {
        match self.kind {
            KernelKind::SquaredDiff => Rule::Se,
            KernelKind::QuadForm(_) => Rule::Mse,
            KernelKind::AbsDiff => Rule::Crps,
            KernelKind::Euclidean => Rule::Es,
            KernelKind::LabelMismatch => Rule::Brier,
            KernelKind::OrdinalAbsDiff => Rule::Rps,
        }
    }

    pub fn check_space(&self, space: OutcomeSpace) -> Result<()> {
        if space == self.space {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                expected: self.space,
                found: space,
            })
        }
    }

    /// Kernel on real coordinates. Callers guarantee matching lengths.
    #[inline]
    pub(crate) fn eval_coords(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::SquaredDiff => {
                let d = y[0] - x[0];
                d * d
            }
            KernelKind::AbsDiff => (y[0] - x[0]).abs(),
            KernelKind::Euclidean => {
                let mut s = 0.0;
                for (a, b) in x.iter().zip(y) {
                    let d = b - a;
                    s += d * d;
                }
                s.sqrt()
            }
            KernelKind::QuadForm(q) => q.eval(x, y),
            KernelKind::LabelMismatch | KernelKind::OrdinalAbsDiff => {
                unreachable!("categorical kernel evaluated on coordinates")
            }
        }
    }

    /// Kernel on zero-based category indices.
    #[inline]
    pub(crate) fn eval_categories(&self, i: usize, j: usize) -> f64 {
        match self.kind {
            KernelKind::LabelMismatch => {
                if i == j {
                    0.0
                } else {
                    1.0
                }
            }
            KernelKind::OrdinalAbsDiff => i.abs_diff(j) as f64,
            _ => unreachable!("real kernel evaluated on categories"),
        }
    }

    /// `L(x, y)` for two outcomes of the kernel's space.
    pub fn eval(&self, x: &Outcome, y: &Outcome) -> Result<f64> {
        x.check_in(&self.space)?;
        y.check_in(&self.space)?;
        Ok(match (x, y) {
            (Outcome::Category(i), Outcome::Category(j)) => self.eval_categories(*i, *j),
            _ => self.eval_coords(
                x.coords().expect("checked real outcome"),
                y.coords().expect("checked real outcome"),
            ),
        })
    }

    /// Kernel matrix `M[j][l] = L(outcomes[j], outcomes[l])`.
    pub fn kernel_matrix(&self, outcomes: &[Outcome]) -> Result<KernelMatrix> {
        outcomes.iter().try_for_each(|o| o.check_in(&self.space))?;
        let n = outcomes.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                (0..n)
                    .map(|l| match (&outcomes[j], &outcomes[l]) {
                        (Outcome::Category(a), Outcome::Category(b)) => self.eval_categories(*a, *b),
                        (a, b) => self.eval_coords(
                            a.coords().expect("checked"),
                            b.coords().expect("checked"),
                        ),
                    })
                    .collect()
            })
            .collect();
        Ok(KernelMatrix {
            n,
            data: rows.concat(),
        })
    }

    /// The `k x k` kernel matrix over all categories of a categorical space.
    pub fn category_matrix(&self) -> Result<KernelMatrix> {
        let k = self.space.categories().ok_or_else(|| {
            Error::Unsupported(format!("{} kernel has no finite category set", self.rule()))
        })?;
        let outcomes: Vec<Outcome> = (0..k).map(Outcome::Category).collect();
        self.kernel_matrix(&outcomes)
    }
}

/// Dense square matrix of kernel values over a finite outcome set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    /// Build from explicit rows. No kernel properties are assumed, so this
    /// also accepts matrices that are not valid kernels.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("kernel matrix must be square".into()));
        }
        Ok(KernelMatrix {
            n,
            data: rows.concat(),
        })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for j in 0..n {
            for l in 0..n {
                data.push(f(j, l));
            }
        }
        KernelMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.data[j * self.n + l]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// `p' M h`.
    pub fn bilinear(&self, p: &[f64], h: &[f64]) -> f64 {
        let mut total = 0.0;
        for (j, &pj) in p.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for (&m, &hl) in self.row(j).iter().zip(h) {
                row += m * hl;
            }
            total += pj * row;
        }
        total
    }

    /// `c' M c`.
    pub fn quadratic(&self, c: &[f64]) -> f64 {
        self.bilinear(c, c)
    }

    /// Exact symmetry and zero diagonal.
    pub fn is_symmetric_with_zero_diagonal(&self) -> bool {
        (0..self.n).all(|j| self.get(j, j) == 0.0 && (0..j).all(|l| self.get(j, l) == self.get(l, j)))
    }
}

/// Outcome of a randomized negative-definiteness check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegDefReport {
    pub trials: usize,
    /// Largest `c' M c` found over zero-sum coefficient vectors.
    pub max_quadratic_form: f64,
    /// Coefficients attaining the maximum.
    pub worst_coefficients: Vec<f64>,
    pub passed: bool,
}

/// Spot-check conditional negative definiteness of `spec` on `outcomes`.
///
/// This can falsify but never prove the property.
pub fn check_negative_definite(
    spec: &KernelSpec,
    outcomes: &[Outcome],
    trials: usize,
    seed: u64,
) -> Result<NegDefReport> {
    if outcomes.len() < 2 {
        return Err(Error::InvalidInput("need at least two outcomes".into()));
    }
    let m = spec.kernel_matrix(outcomes)?;
    check_matrix_negative_definite(&m, trials, seed)
}

/// As [`check_negative_definite`], on an explicit matrix.
///
/// Coefficients are standard normal draws centered to sum to zero, from a
/// ChaCha8 stream seeded with `seed`.
pub fn check_matrix_negative_definite(
    matrix: &KernelMatrix,
    trials: usize,
    seed: u64,
) -> Result<NegDefReport> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two outcomes".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let mut worst = Vec::new();
    let mut c = vec![0.0; n];
    for _ in 0..trials {
        for ci in c.iter_mut() {
            *ci = StandardNormal.sample(&mut rng);
        }
        let mean = c.iter().sum::<f64>() / n as f64;
        c.iter_mut().for_each(|ci| *ci -= mean);
        let q = matrix.quadratic(&c);
        if q > best {
            best = q;
            worst.clone_from(&c);
        }
    }
    Ok(NegDefReport {
        trials,
        max_quadratic_form: best,
        worst_coefficients: worst,
        passed: best <= NEG_DEF_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reals(xs: &[f64]) -> Vec<Outcome> {
        xs.iter().map(|&x| Outcome::Real(x)).collect()
    }

    #[test]
    fn scalar_kernels() {
        let se = KernelSpec::squared_error();
        assert_eq!(se.eval(&Outcome::Real(1.0), &Outcome::Real(4.0)).unwrap(), 9.0);
        let crps = KernelSpec::crps();
        assert_eq!(crps.eval(&Outcome::Real(1.0), &Outcome::Real(4.0)).unwrap(), 3.0);
        let brier = KernelSpec::brier(3).unwrap();
        assert_eq!(brier.eval(&Outcome::Category(1), &Outcome::Category(1)).unwrap(), 0.0);
        assert_eq!(brier.eval(&Outcome::Category(0), &Outcome::Category(2)).unwrap(), 1.0);
    }

    #[test]
    fn quad_form_with_scaled_identity() {
        let q = KernelSpec::quad_form(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let v = q
            .eval(&Outcome::Vector(vec![0.0, 0.0]), &Outcome::Vector(vec![1.0, 1.0]))
            .unwrap();
        assert!((v - 4.0).abs() < 1e-15);
    }

    #[test]
    fn quad_form_rejects_bad_matrices() {
        assert!(KernelSpec::quad_form(vec![vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        // Rank deficient: PSD but singular.
        assert!(KernelSpec::quad_form(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        assert!(KernelSpec::quad_form(vec![vec![-1.0]]).is_err());
        assert!(KernelSpec::quad_form(vec![vec![1.0, 0.0]]).is_err());
        assert!(KernelSpec::quad_form(vec![]).is_err());
    }

    #[test]
    fn quad_form_identity_is_squared_euclidean() {
        let q = KernelSpec::quad_form(QuadForm::identity(3).unwrap().rows()).unwrap();
        let x = [0.3, -1.2, 2.0];
        let y = [1.7, 0.4, -0.5];
        let direct: f64 = x.iter().zip(&y).map(|(a, b)| (b - a) * (b - a)).sum();
        assert!((q.eval_coords(&x, &y) - direct).abs() < 1e-12);
    }

    #[test]
    fn cholesky_transform_equivalence() {
        let a = vec![vec![4.0, 1.0, 0.5], vec![1.0, 3.0, -0.2], vec![0.5, -0.2, 2.0]];
        let q = QuadForm::new(a.clone()).unwrap();
        let x = [0.5, -1.0, 2.0];
        let y = [-0.3, 0.8, 1.1];
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - a).collect();
        let mut direct = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                direct += d[i] * a[i][j] * d[j];
            }
        }
        let (u, v) = (q.transform(&x), q.transform(&y));
        let via: f64 = u.iter().zip(&v).map(|(a, b)| (b - a) * (b - a)).sum();
        assert!((direct - via).abs() < 1e-10);
        assert!((q.eval(&x, &y) - direct).abs() < 1e-10);
    }

    #[test]
    fn ordinal_matrix() {
        let m = KernelSpec::rps(3).unwrap().category_matrix().unwrap();
        assert_eq!(m.rows(), vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]);
    }

    #[test]
    fn single_outcome_matrix_is_zero() {
        let m = KernelSpec::crps().kernel_matrix(&reals(&[3.5])).unwrap();
        assert_eq!(m.rows(), vec![vec![0.0]]);
    }

    #[test]
    fn euclidean_matrix() {
        let es = KernelSpec::energy(2).unwrap();
        let m = es
            .kernel_matrix(&[Outcome::Vector(vec![0.0, 0.0]), Outcome::Vector(vec![3.0, 4.0])])
            .unwrap();
        assert_eq!(m.rows(), vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
    }

    #[test]
    fn kernel_matrix_errors_on_wrong_space() {
        assert!(KernelSpec::energy(2)
            .unwrap()
            .kernel_matrix(&[Outcome::Vector(vec![0.0])])
            .is_err());
        assert!(KernelSpec::crps().category_matrix().is_err());
    }

    #[test]
    fn squared_diff_passes_neg_def_check() {
        let r = check_negative_definite(&KernelSpec::squared_error(), &reals(&[0.0, 1.0, 2.0]), 1000, 1)
            .unwrap();
        assert!(r.passed, "max {}", r.max_quadratic_form);
    }

    #[test]
    fn quartic_kernel_fails_neg_def_check() {
        let xs = [0.0f64, 1.0, 2.0];
        let quartic = KernelMatrix::from_fn(3, |j, l| (xs[j] - xs[l]).powi(4));
        // c = (1, -2, 1) gives c'Mc = 24.
        assert_eq!(quartic.quadratic(&[1.0, -2.0, 1.0]), 24.0);
        let r = check_matrix_negative_definite(&quartic, 1000, 1).unwrap();
        assert!(!r.passed);
        assert!(r.max_quadratic_form > 0.0);
    }

    #[test]
    fn off_diagonal_offset_stays_negative_definite() {
        // Adding a constant off the diagonal contributes -||c||^2 for zero-sum c.
        let xs = [0.0f64, 1.0, 2.0];
        let offset = KernelMatrix::from_fn(3, |j, l| {
            if j == l {
                0.0
            } else {
                (xs[j] - xs[l]).powi(2) + 1.0
            }
        });
        assert!(check_matrix_negative_definite(&offset, 1000, 1).unwrap().passed);
        assert_eq!(offset.quadratic(&[1.0, -1.0, 0.0]), -4.0);
    }

    #[test]
    fn two_point_identity() {
        let m = KernelSpec::crps().kernel_matrix(&reals(&[0.0, 2.5])).unwrap();
        assert_eq!(m.quadratic(&[1.0, -1.0]), -2.0 * 2.5);
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("RPS".parse::<Rule>().unwrap(), Rule::Rps);
        assert!("log".parse::<Rule>().is_err());
        assert_eq!(KernelSpec::for_rule(Rule::Es, 3, None).unwrap().rule(), Rule::Es);
        assert!(KernelSpec::for_rule(Rule::Se, 2, None).is_err());
        assert!(KernelSpec::for_rule(Rule::Brier, 3, Some(vec![vec![1.0]])).is_err());
        let m = KernelSpec::for_rule(Rule::Mse, 2, None).unwrap();
        assert_eq!(m.space(), OutcomeSpace::RealVector { dim: 2 });
    }
}
