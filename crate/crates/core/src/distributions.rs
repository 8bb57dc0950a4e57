//! Finitely representable forecast distributions and the linear pool.
//!
//! Two representations cover every outcome space the kernel scores need:
//! a probability vector over `k` categories ([`CategoricalDist`]) and a
//! weighted set of real vectors ([`EmpiricalDist`]). Both are immutable once
//! built; constructors validate and renormalize weights.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{normalize_probabilities, pairwise_sum};

/// The set outcomes live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutcomeSpace {
    RealLine,
    RealVector { dim: usize },
    /// Interchangeable labels `0..k`.
    UnorderedCategories { k: usize },
    /// Ranks `1..=k`, stored as indices `0..k`.
    OrderedCategories { k: usize },
}

impl OutcomeSpace {
    pub fn real_vector(dim: usize) -> Result<Self> {
        let space = OutcomeSpace::RealVector { dim };
        space.validate()?;
        Ok(space)
    }

    pub fn unordered(k: usize) -> Result<Self> {
        let space = OutcomeSpace::UnorderedCategories { k };
        space.validate()?;
        Ok(space)
    }

    pub fn ordered(k: usize) -> Result<Self> {
        let space = OutcomeSpace::OrderedCategories { k };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OutcomeSpace::RealLine => Ok(()),
            OutcomeSpace::RealVector { dim } if dim >= 1 => Ok(()),
            OutcomeSpace::RealVector { .. } => {
                Err(Error::InvalidSpace("real-vector dimension must be >= 1".into()))
            }
            OutcomeSpace::UnorderedCategories { k } | OutcomeSpace::OrderedCategories { k }
                if k >= 2 =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidSpace("category count must be >= 2".into())),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(
            self,
            OutcomeSpace::UnorderedCategories { .. } | OutcomeSpace::OrderedCategories { .. }
        )
    }

    /// Number of categories, for categorical spaces.
    pub fn categories(&self) -> Option<usize> {
        match *self {
            OutcomeSpace::UnorderedCategories { k } | OutcomeSpace::OrderedCategories { k } => {
                Some(k)
            }
            _ => None,
        }
    }

    /// Coordinate count, for real spaces.
    pub fn dim(&self) -> Option<usize> {
        match *self {
            OutcomeSpace::RealLine => Some(1),
            OutcomeSpace::RealVector { dim } => Some(dim),
            _ => None,
        }
    }
}

impl fmt::Display for OutcomeSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeSpace::RealLine => write!(f, "real-line"),
            OutcomeSpace::RealVector { dim } => write!(f, "real-vector({dim})"),
            OutcomeSpace::UnorderedCategories { k } => write!(f, "unordered-categories({k})"),
            OutcomeSpace::OrderedCategories { k } => write!(f, "ordered-categories({k})"),
        }
    }
}

/// A single realized outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Real(f64),
    Vector(Vec<f64>),
    /// Zero-based category index.
    Category(usize),
}

impl Outcome {
    /// Coordinates of a real-valued outcome.
    pub fn coords(&self) -> Option<&[f64]> {
        match self {
            Outcome::Real(x) => Some(std::slice::from_ref(x)),
            Outcome::Vector(v) => Some(v),
            Outcome::Category(_) => None,
        }
    }

    /// Check that the outcome belongs to `space`.
    pub fn check_in(&self, space: &OutcomeSpace) -> Result<()> {
        match (self, space) {
            (Outcome::Real(x), OutcomeSpace::RealLine) => finite(*x),
            (Outcome::Vector(v), OutcomeSpace::RealLine) if v.len() == 1 => finite(v[0]),
            (Outcome::Vector(v), OutcomeSpace::RealVector { dim }) => {
                if v.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: v.len(),
                    });
                }
                v.iter().try_for_each(|&x| finite(x))
            }
            (Outcome::Real(x), OutcomeSpace::RealVector { dim: 1 }) => finite(*x),
            (Outcome::Category(c), s) if s.is_categorical() => {
                let k = s.categories().unwrap_or(0);
                if *c < k {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "category index {c} out of range for {k} categories"
                    )))
                }
            }
            _ => Err(Error::InvalidInput(format!(
                "outcome {self:?} does not belong to {space}"
            ))),
        }
    }
}

fn finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite coordinate {x}")))
    }
}

/// Probability vector over the `k` categories of a categorical space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalDist {
    space: OutcomeSpace,
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(space: OutcomeSpace, probs: Vec<f64>) -> Result<Self> {
        space.validate()?;
        let k = space.categories().ok_or_else(|| {
            Error::InvalidSpace(format!("{space} is not a categorical space"))
        })?;
        if probs.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: probs.len(),
            });
        }
        let probs = normalize_probabilities(probs, "category probabilities")?;
        Ok(CategoricalDist { space, probs })
    }

    /// Point mass on category `index`.
    pub fn point_mass(space: OutcomeSpace, index: usize) -> Result<Self> {
        let k = space
            .categories()
            .ok_or_else(|| Error::InvalidSpace(format!("{space} is not a categorical space")))?;
        if index >= k {
            return Err(Error::InvalidInput(format!(
                "category index {index} out of range for {k} categories"
            )));
        }
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        CategoricalDist::new(space, probs)
    }

    pub fn space(&self) -> OutcomeSpace {
        self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// Cumulative probabilities `P_l = p_1 + ... + p_l`.
    pub fn cumulative(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

/// Weighted finite sample of real vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDist {
    space: OutcomeSpace,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(space: OutcomeSpace, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = real_dim(&space)?;
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        EmpiricalDist::from_flat(space, flat, weights)
    }

    /// Build from row-major coordinates (`weights.len() * dim` values).
    pub fn from_flat(space: OutcomeSpace, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let dim = real_dim(&space)?;
        if weights.is_empty() {
            return Err(Error::InvalidInput("empirical distribution needs at least one point".into()));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: weights.len() * dim,
                found: points.len(),
            });
        }
        points.iter().try_for_each(|&x| finite(x))?;
        let weights = normalize_probabilities(weights, "sample weights")?;
        Ok(EmpiricalDist {
            space,
            dim,
            points,
            weights,
        })
    }

    /// Equally weighted sample.
    pub fn uniform(space: OutcomeSpace, points: Vec<Vec<f64>>) -> Result<Self> {
        let m = points.len();
        EmpiricalDist::new(space, points, vec![1.0 / m.max(1) as f64; m])
    }

    /// Equally weighted univariate sample.
    pub fn uniform_real(values: &[f64]) -> Result<Self> {
        let m = values.len();
        EmpiricalDist::from_flat(OutcomeSpace::RealLine, values.to_vec(), vec![1.0 / m.max(1) as f64; m])
    }

    pub fn point_mass(space: OutcomeSpace, point: Vec<f64>) -> Result<Self> {
        EmpiricalDist::new(space, vec![point], vec![1.0])
    }

    pub fn point_mass_real(x: f64) -> Result<Self> {
        EmpiricalDist::from_flat(OutcomeSpace::RealLine, vec![x], vec![1.0])
    }

    pub fn space(&self) -> OutcomeSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Collapse duplicate points, summing their weights. Points come out in
    /// lexicographic order.
    pub fn merge_duplicates(&self) -> EmpiricalDist {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| cmp_coords(self.point(a), self.point(b)));
        let mut points = Vec::with_capacity(self.points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        let mut last: Option<usize> = None;
        for j in order {
            match last {
                Some(l) if self.point(l) == self.point(j) => {
                    *weights.last_mut().expect("non-empty") += self.weights[j];
                }
                _ => {
                    points.extend_from_slice(self.point(j));
                    weights.push(self.weights[j]);
                    last = Some(j);
                }
            }
        }
        EmpiricalDist {
            space: self.space,
            dim: self.dim,
            points,
            weights,
        }
    }
}

fn real_dim(space: &OutcomeSpace) -> Result<usize> {
    space.validate()?;
    space
        .dim()
        .ok_or_else(|| Error::InvalidSpace(format!("{space} is not a real space")))
}

fn cmp_coords(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// A forecast distribution in one of the two finite representations.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ForecastDistribution {
    Categorical(CategoricalDist),
    Empirical(EmpiricalDist),
}

impl From<CategoricalDist> for ForecastDistribution {
    fn from(d: CategoricalDist) -> Self {
        ForecastDistribution::Categorical(d)
    }
}

impl From<EmpiricalDist> for ForecastDistribution {
    fn from(d: EmpiricalDist) -> Self {
        ForecastDistribution::Empirical(d)
    }
}

impl ForecastDistribution {
    pub fn space(&self) -> OutcomeSpace {
        match self {
            ForecastDistribution::Categorical(d) => d.space(),
            ForecastDistribution::Empirical(d) => d.space(),
        }
    }

    /// Number of atoms in the representation (categories or sample points).
    pub fn support_len(&self) -> usize {
        match self {
            ForecastDistribution::Categorical(d) => d.k(),
            ForecastDistribution::Empirical(d) => d.len(),
        }
    }

    pub fn as_categorical(&self) -> Option<&CategoricalDist> {
        match self {
            ForecastDistribution::Categorical(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_empirical(&self) -> Option<&EmpiricalDist> {
        match self {
            ForecastDistribution::Empirical(d) => Some(d),
            _ => None,
        }
    }

    /// True when all positive mass sits on a single outcome.
    pub fn is_point_mass(&self) -> bool {
        match self {
            ForecastDistribution::Categorical(d) => {
                d.probs().iter().filter(|&&p| p > 0.0).count() == 1
            }
            ForecastDistribution::Empirical(d) => {
                let mut first: Option<&[f64]> = None;
                for (x, w) in d.iter() {
                    if w <= 0.0 {
                        continue;
                    }
                    match first {
                        None => first = Some(x),
                        Some(f) if f == x => {}
                        Some(_) => return false,
                    }
                }
                true
            }
        }
    }

    /// Total order on representations, used to evaluate symmetric
    /// quantities along one fixed arithmetic path.
    pub(crate) fn repr_cmp(&self, other: &Self) -> Ordering {
        fn cmp_slices(a: &[f64], b: &[f64]) -> Ordering {
            a.len().cmp(&b.len()).then_with(|| cmp_coords(a, b))
        }
        match (self, other) {
            (ForecastDistribution::Categorical(a), ForecastDistribution::Categorical(b)) => {
                cmp_slices(a.probs(), b.probs())
            }
            (ForecastDistribution::Empirical(a), ForecastDistribution::Empirical(b)) => {
                cmp_slices(a.weights(), b.weights())
                    .then_with(|| cmp_slices(a.points_flat(), b.points_flat()))
            }
            (ForecastDistribution::Categorical(_), _) => Ordering::Less,
            (_, _) => Ordering::Greater,
        }
    }
}

/// Components of a linear pool together with their combination weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolSpec {
    components: Vec<ForecastDistribution>,
    weights: Vec<f64>,
}

impl PoolSpec {
    pub fn new(components: Vec<ForecastDistribution>, weights: Vec<f64>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyPool)?;
        let space = first.space();
        let representation = std::mem::discriminant(first);
        for c in &components[1..] {
            if c.space() != space {
                return Err(Error::SpaceMismatch {
                    expected: space,
                    found: c.space(),
                });
            }
            if std::mem::discriminant(c) != representation {
                return Err(Error::InvalidInput(
                    "pool mixes categorical and empirical components".into(),
                ));
            }
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                found: weights.len(),
            });
        }
        let weights = normalize_probabilities(weights, "pool weights")?;
        Ok(PoolSpec {
            components,
            weights,
        })
    }

    /// Equal weights `1/n`.
    pub fn equal(components: Vec<ForecastDistribution>) -> Result<Self> {
        let n = components.len();
        PoolSpec::new(components, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn components(&self) -> &[ForecastDistribution] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn space(&self) -> OutcomeSpace {
        self.components[0].space()
    }
}

/// The linear pool `sum_i w_i F_i` as an exact finite mixture.
///
/// Categorical components combine probability vectors. Empirical components
/// are concatenated with weights scaled by the component weight; nothing is
/// resampled.
pub fn linear_pool(pool: &PoolSpec) -> ForecastDistribution {
    match &pool.components[0] {
        ForecastDistribution::Categorical(first) => {
            let k = first.k();
            let mut probs = vec![0.0; k];
            for (c, &w) in pool.components.iter().zip(&pool.weights) {
                let d = c.as_categorical().expect("pool representations checked");
                for (acc, &p) in probs.iter_mut().zip(d.probs()) {
                    *acc += w * p;
                }
            }
            renormalize(&mut probs);
            ForecastDistribution::Categorical(CategoricalDist {
                space: first.space(),
                probs,
            })
        }
        ForecastDistribution::Empirical(first) => {
            let total: usize = pool.components.iter().map(|c| c.support_len()).sum();
            let mut points = Vec::with_capacity(total * first.dim());
            let mut weights = Vec::with_capacity(total);
            for (c, &w) in pool.components.iter().zip(&pool.weights) {
                let d = c.as_empirical().expect("pool representations checked");
                points.extend_from_slice(d.points_flat());
                weights.extend(d.weights().iter().map(|&v| w * v));
            }
            renormalize(&mut weights);
            ForecastDistribution::Empirical(EmpiricalDist {
                space: first.space(),
                dim: first.dim(),
                points,
                weights,
            })
        }
    }
}

fn renormalize(ws: &mut [f64]) {
    let total = pairwise_sum(ws);
    if total != 1.0 && total > 0.0 {
        for w in ws.iter_mut() {
            *w /= total;
        }
    }
}

/// First two moments of a distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Population (co)variance, `dim x dim`.
    pub covariance: Vec<Vec<f64>>,
}

impl Moments {
    /// Variance of the first coordinate; the variance for univariate cases.
    pub fn variance(&self) -> f64 {
        self.covariance[0][0]
    }
}

/// Weighted mean and population covariance.
///
/// Categorical distributions need `bin_values` (one real per category,
/// typically bin midpoints); empirical distributions must not get them.
pub fn mean_and_variance(dist: &ForecastDistribution, bin_values: Option<&[f64]>) -> Result<Moments> {
    match (dist, bin_values) {
        (ForecastDistribution::Categorical(d), Some(values)) => {
            if values.len() != d.k() {
                return Err(Error::DimensionMismatch {
                    expected: d.k(),
                    found: values.len(),
                });
            }
            values.iter().try_for_each(|&x| finite(x))?;
            Ok(weighted_moments(values, d.probs(), 1))
        }
        (ForecastDistribution::Categorical(_), None) => Err(Error::InvalidInput(
            "categorical moments need one bin value per category".into(),
        )),
        (ForecastDistribution::Empirical(d), None) => {
            Ok(weighted_moments(d.points_flat(), d.weights(), d.dim()))
        }
        (ForecastDistribution::Empirical(_), Some(_)) => Err(Error::InvalidInput(
            "bin values only apply to categorical distributions".into(),
        )),
    }
}

fn weighted_moments(points: &[f64], weights: &[f64], dim: usize) -> Moments {
    let mut mean = vec![0.0; dim];
    for (x, &w) in points.chunks_exact(dim).zip(weights) {
        for (m, &xi) in mean.iter_mut().zip(x) {
            *m += w * xi;
        }
    }
    let mut covariance = vec![vec![0.0; dim]; dim];
    for (x, &w) in points.chunks_exact(dim).zip(weights) {
        for a in 0..dim {
            let da = x[a] - mean[a];
            for b in a..dim {
                covariance[a][b] += w * da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            covariance[a][b] = covariance[b][a];
        }
    }
    Moments { mean, covariance }
}
