//! Panel analysis of binned survey probabilities.
//!
//! Each period's respondents are pooled linearly. The pool is decomposed
//! under the RPS (categories as ordered bins) and under squared error (mass
//! placed at bin midpoints, outer bins truncated), and pool and respondent
//! RPS values are compared against realized outcomes.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{CategoricalDist, EmpiricalDist, ForecastDistribution, Outcome, OutcomeSpace, PoolSpec};
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, Rule};
use crate::numeric::pairwise_sum;
use crate::pooling::{decompose, Decomposition, EX_POST_TOL};
use crate::scoring::score;

/// Default tolerance on a response's probability sum, after conversion to
/// fractions.
pub const DEFAULT_SUM_TOL: f64 = 1e-6;

/// One respondent's binned probabilities for one period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelRecord {
    pub period: String,
    pub respondent: String,
    pub probs: Vec<f64>,
}

/// Interval bins `(-inf, c1], (c1, c2], ..., (c_m, inf)` with truncation
/// bounds for the two open-ended bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinScheme {
    cuts: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl BinScheme {
    pub fn new(cuts: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if cuts.is_empty() {
            return Err(Error::InvalidInput("bin scheme needs at least one cut point".into()));
        }
        if cuts.iter().any(|c| !c.is_finite()) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidInput("bin scheme values must be finite".into()));
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("cut points must be strictly increasing".into()));
        }
        if lower >= cuts[0] || upper <= cuts[cuts.len() - 1] {
            return Err(Error::InvalidInput(
                "truncation bounds must lie outside the extreme cut points".into(),
            ));
        }
        Ok(BinScheme { cuts, lower, upper })
    }

    /// The ten inflation bins of the consumer-expectations survey, outer
    /// bins truncated at -25 and 25.
    pub fn inflation_survey() -> Self {
        BinScheme::new(vec![-12.0, -8.0, -4.0, -2.0, 0.0, 2.0, 4.0, 8.0, 12.0], -25.0, 25.0)
            .expect("valid built-in scheme")
    }

    pub fn with_truncation(&self, lower: f64, upper: f64) -> Result<Self> {
        BinScheme::new(self.cuts.clone(), lower, upper)
    }

    pub fn k(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn truncation(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Bin midpoints, with the outer bins closed at the truncation bounds.
    pub fn midpoints(&self) -> Vec<f64> {
        let mut edges = Vec::with_capacity(self.cuts.len() + 2);
        edges.push(self.lower);
        edges.extend_from_slice(&self.cuts);
        edges.push(self.upper);
        edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Zero-based bin of `value`. Bins are left-open and right-closed, so a
    /// value equal to a cut point belongs to the lower bin.
    pub fn category(&self, value: f64) -> Result<usize> {
        if value.is_nan() {
            return Err(Error::InvalidInput("outcome is NaN".into()));
        }
        Ok(self.cuts.partition_point(|&c| c < value))
    }
}

/// Combination weights within a period.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PanelWeights {
    /// `1 / n_t` over the respondents retained in period `t`.
    #[default]
    Equal,
    /// Raw weights per `(period, respondent)`, renormalized within each
    /// period over retained respondents.
    Supplied(HashMap<(String, String), f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelConfig {
    pub weights: PanelWeights,
    /// Allowed distance of a probability sum from one.
    pub sum_tolerance: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            weights: PanelWeights::Equal,
            sum_tolerance: DEFAULT_SUM_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRecord {
    pub index: usize,
    pub period: String,
    pub respondent: String,
    pub reason: String,
}

/// Records removed during cleaning.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DropReport {
    pub total: usize,
    pub dropped: Vec<DroppedRecord>,
}

impl DropReport {
    pub fn retained(&self) -> usize {
        self.total - self.dropped.len()
    }
}

/// Whether probabilities arrive as percentages or fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PercentMode {
    /// Percent when the median row sum exceeds 10.
    #[default]
    Auto,
    Percent,
    Fraction,
}

/// Convert probabilities to fractions. Returns whether input was percent.
pub fn to_fractions(records: &mut [PanelRecord], mode: PercentMode) -> bool {
    let percent = match mode {
        PercentMode::Percent => true,
        PercentMode::Fraction => false,
        PercentMode::Auto => {
            let mut sums: Vec<f64> = records.iter().map(|r| r.probs.iter().sum::<f64>()).collect();
            sums.retain(|s| s.is_finite());
            if sums.is_empty() {
                false
            } else {
                sums.sort_by(f64::total_cmp);
                sums[sums.len() / 2] > 10.0
            }
        }
    };
    if percent {
        for r in records.iter_mut() {
            r.probs.iter_mut().for_each(|p| *p /= 100.0);
        }
    }
    percent
}

fn check_record(r: &PanelRecord, k: usize, tol: f64) -> std::result::Result<Vec<f64>, String> {
    if r.probs.len() != k {
        return Err(format!("expected {k} probabilities, found {}", r.probs.len()));
    }
    if let Some(p) = r.probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("invalid probability {p}"));
    }
    let total: f64 = r.probs.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(format!("probabilities sum to {total}"));
    }
    Ok(r.probs.iter().map(|p| p / total).collect())
}

struct Respondent {
    id: String,
    probs: Vec<f64>,
    weight: f64,
}

fn group_periods(
    records: &[PanelRecord],
    scheme: &BinScheme,
    config: &PanelConfig,
) -> (BTreeMap<String, Vec<Respondent>>, DropReport) {
    let k = scheme.k();
    let mut report = DropReport {
        total: records.len(),
        dropped: Vec::new(),
    };
    let mut periods: BTreeMap<String, Vec<Respondent>> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        let checked = check_record(r, k, config.sum_tolerance).and_then(|probs| {
            let weight = match &config.weights {
                PanelWeights::Equal => 1.0,
                PanelWeights::Supplied(map) => *map
                    .get(&(r.period.clone(), r.respondent.clone()))
                    .ok_or_else(|| "no weight supplied".to_string())?,
            };
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(format!("invalid weight {weight}"));
            }
            Ok((probs, weight))
        });
        match checked {
            Ok((probs, weight)) => periods.entry(r.period.clone()).or_default().push(Respondent {
                id: r.respondent.clone(),
                probs,
                weight,
            }),
            Err(reason) => report.dropped.push(DroppedRecord {
                index,
                period: r.period.clone(),
                respondent: r.respondent.clone(),
                reason,
            }),
        }
    }
    (periods, report)
}

struct PeriodPools {
    rps_spec: KernelSpec,
    rps: PoolSpec,
    se: PoolSpec,
}

fn period_pools(scheme: &BinScheme, respondents: &[Respondent]) -> Result<PeriodPools> {
    let k = scheme.k();
    let rps_spec = KernelSpec::rps(k)?;
    let space = OutcomeSpace::ordered(k)?;
    let mids = scheme.midpoints();
    let total: f64 = respondents.iter().map(|r| r.weight).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("period weights sum to zero".into()));
    }
    let weights: Vec<f64> = respondents.iter().map(|r| r.weight / total).collect();
    let mut cats = Vec::with_capacity(respondents.len());
    let mut bins = Vec::with_capacity(respondents.len());
    for r in respondents {
        cats.push(ForecastDistribution::from(CategoricalDist::new(space, r.probs.clone())?));
        bins.push(ForecastDistribution::from(EmpiricalDist::from_flat(
            OutcomeSpace::RealLine,
            mids.clone(),
            r.probs.clone(),
        )?));
    }
    Ok(PeriodPools {
        rps_spec,
        rps: PoolSpec::new(cats, weights.clone())?,
        se: PoolSpec::new(bins, weights)?,
    })
}

/// Pool entropy, average component entropy and disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyTriple {
    pub pool: f64,
    pub average: f64,
    pub disagreement: f64,
}

impl From<&Decomposition> for EntropyTriple {
    fn from(d: &Decomposition) -> Self {
        EntropyTriple {
            pool: d.pool_entropy,
            average: d.avg_component_entropy,
            disagreement: d.disagreement,
        }
    }
}

impl EntropyTriple {
    pub fn share(&self) -> f64 {
        if self.pool > 0.0 {
            (self.disagreement / self.pool).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodDecompositionRow {
    pub period: String,
    pub respondents: usize,
    /// ERPS of the pool, average ERPS, RPS disagreement.
    pub rps: EntropyTriple,
    /// Variance of the pool, average variance, SE disagreement.
    pub se: EntropyTriple,
    pub rps_share: f64,
    pub se_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelRun {
    pub rows: Vec<PeriodDecompositionRow>,
    pub dropped: DropReport,
}

/// Per-period RPS and SE decompositions of the respondents' linear pool.
///
/// Invalid records are dropped and counted. Rows are sorted by period
/// label.
pub fn run_panel(records: &[PanelRecord], scheme: &BinScheme, config: &PanelConfig) -> Result<PanelRun> {
    let (periods, dropped) = group_periods(records, scheme, config);
    let periods: Vec<(String, Vec<Respondent>)> = periods.into_iter().collect();
    let rows = periods
        .par_iter()
        .map(|(period, respondents)| {
            let pools = period_pools(scheme, respondents)?;
            let rps = decompose(&pools.rps_spec, &pools.rps)?;
            let se = decompose(&KernelSpec::squared_error(), &pools.se)?;
            rps.validate()?;
            se.validate()?;
            Ok(PeriodDecompositionRow {
                period: period.clone(),
                respondents: respondents.len(),
                rps: (&rps).into(),
                se: (&se).into(),
                rps_share: rps.disagreement_share(),
                se_share: se.disagreement_share(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PanelRun { rows, dropped })
}

/// One period's decomposition under a single rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodDecomposition {
    pub period: String,
    pub respondents: usize,
    pub decomposition: Decomposition,
}

/// Per-period decomposition under `rule`.
///
/// Brier and RPS treat the bins as categories; squared error and CRPS place
/// each bin's mass at its midpoint.
pub fn panel_decompositions(
    records: &[PanelRecord],
    scheme: &BinScheme,
    config: &PanelConfig,
    rule: Rule,
) -> Result<(Vec<PeriodDecomposition>, DropReport)> {
    let spec = match rule {
        Rule::Brier | Rule::Rps => KernelSpec::for_rule(rule, scheme.k(), None)?,
        Rule::Se | Rule::Crps => KernelSpec::for_rule(rule, 1, None)?,
        other => {
            return Err(Error::Unsupported(format!(
                "panel input supports brier, rps, se and crps, not {other}"
            )))
        }
    };
    let (periods, dropped) = group_periods(records, scheme, config);
    let periods: Vec<(String, Vec<Respondent>)> = periods.into_iter().collect();
    let rows = periods
        .par_iter()
        .map(|(period, respondents)| {
            let pools = period_pools(scheme, respondents)?;
            let pool = match rule {
                Rule::Se | Rule::Crps => &pools.se,
                _ => &pools.rps,
            };
            let pool = if rule == Rule::Brier {
                let comps = pool
                    .components()
                    .iter()
                    .map(|c| {
                        let p = c.as_categorical().expect("categorical").probs().to_vec();
                        Ok(CategoricalDist::new(spec.space(), p)?.into())
                    })
                    .collect::<Result<Vec<_>>>()?;
                PoolSpec::new(comps, pool.weights().to_vec())?
            } else {
                pool.clone()
            };
            let decomposition = decompose(&spec, &pool)?;
            decomposition.validate()?;
            Ok(PeriodDecomposition {
                period: period.clone(),
                respondents: respondents.len(),
                decomposition,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, dropped))
}

/// Shift a `YYYY-MM` label by `months`. Any label shifts by zero.
pub fn shift_period(label: &str, months: i32) -> Result<String> {
    if months == 0 {
        return Ok(label.to_string());
    }
    let parsed = label.split_once('-').and_then(|(y, m)| {
        let y: i32 = y.parse().ok()?;
        let m: i32 = m.parse().ok()?;
        (1..=12).contains(&m).then_some((y, m))
    });
    let (y, m) = parsed.ok_or_else(|| {
        Error::InvalidInput(format!("period '{label}' is not YYYY-MM; cannot apply a horizon"))
    })?;
    let idx = y * 12 + (m - 1) + months;
    Ok(format!("{:04}-{:02}", idx.div_euclid(12), idx.rem_euclid(12) + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizedRow {
    pub period: String,
    pub target_period: String,
    pub outcome: f64,
    /// Zero-based bin of the outcome.
    pub category: usize,
    pub respondents: usize,
    pub pool_score: f64,
    pub avg_score: f64,
    pub disagreement: f64,
    pub per_respondent: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizedRun {
    pub rows: Vec<RealizedRow>,
    /// Periods skipped because no outcome was available.
    pub missing_outcomes: Vec<String>,
    pub dropped: DropReport,
}

/// Realized RPS of the pool and of each respondent.
///
/// The outcome for forecast period `t` is looked up at `t` shifted by
/// `horizon` months. Periods without an outcome are listed, not scored.
pub fn realized_scores(
    records: &[PanelRecord],
    scheme: &BinScheme,
    outcomes: &BTreeMap<String, f64>,
    horizon: i32,
    config: &PanelConfig,
) -> Result<RealizedRun> {
    let (periods, dropped) = group_periods(records, scheme, config);
    let mut missing = Vec::new();
    let mut work = Vec::new();
    for (period, respondents) in periods {
        let target = shift_period(&period, horizon)?;
        match outcomes.get(&target) {
            Some(&value) => work.push((period, target, value, respondents)),
            None => missing.push(period),
        }
    }
    let rows = work
        .par_iter()
        .map(|(period, target, value, respondents)| {
            let category = scheme.category(*value)?;
            let y = Outcome::Category(category);
            let pools = period_pools(scheme, respondents)?;
            let spec = &pools.rps_spec;
            let pooled = crate::distributions::linear_pool(&pools.rps);
            let pool_score = score(spec, &pooled, &y)?.value;
            let per = pools
                .rps
                .components()
                .iter()
                .map(|c| score(spec, c, &y).map(|s| s.value))
                .collect::<Result<Vec<_>>>()?;
            let weighted: Vec<f64> = pools.rps.weights().iter().zip(&per).map(|(w, s)| w * s).collect();
            let avg_score = pairwise_sum(&weighted);
            let disagreement = decompose(spec, &pools.rps)?.disagreement;
            let residual = avg_score - pool_score - disagreement;
            if residual.abs() > EX_POST_TOL * avg_score.max(1.0) {
                return Err(Error::Consistency {
                    what: format!("ex-post identity in period {period}"),
                    value: residual,
                });
            }
            Ok(RealizedRow {
                period: period.clone(),
                target_period: target.clone(),
                outcome: *value,
                category,
                respondents: respondents.len(),
                pool_score,
                avg_score,
                disagreement,
                per_respondent: respondents.iter().map(|r| r.id.clone()).zip(per).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RealizedRun {
        rows,
        missing_outcomes: missing,
        dropped,
    })
}

pub const CORRELATION_LABELS: [&str; 6] = [
    "erps_pool",
    "erps_average",
    "disagreement_rps",
    "variance_pool",
    "variance_average",
    "disagreement_se",
];

/// Pearson correlations among the six decomposition series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub labels: [&'static str; 6],
    /// `None` where a series is constant.
    pub values: [[Option<f64>; 6]; 6],
}

pub fn component_correlations(rows: &[PeriodDecompositionRow]) -> Result<CorrelationTable> {
    if rows.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "correlations need at least 3 periods, got {}",
            rows.len()
        )));
    }
    let series: Vec<Vec<f64>> = vec![
        rows.iter().map(|r| r.rps.pool).collect(),
        rows.iter().map(|r| r.rps.average).collect(),
        rows.iter().map(|r| r.rps.disagreement).collect(),
        rows.iter().map(|r| r.se.pool).collect(),
        rows.iter().map(|r| r.se.average).collect(),
        rows.iter().map(|r| r.se.disagreement).collect(),
    ];
    let mut values = [[None; 6]; 6];
    for a in 0..6 {
        for b in a..6 {
            let c = pearson(&series[a], &series[b]);
            values[a][b] = c;
            values[b][a] = c;
        }
    }
    Ok(CorrelationTable {
        labels: CORRELATION_LABELS,
        values,
    })
}

/// Two-pass Pearson correlation; `None` if either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    if std::ptr::eq(x, y) {
        return Some(1.0);
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Parameters of the synthetic panel generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub periods: usize,
    pub min_respondents: usize,
    pub max_respondents: usize,
    /// Draws each respondent bins to form its probabilities.
    pub draws_per_respondent: usize,
    /// Months between forecast and outcome.
    pub horizon: i32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            periods: 60,
            min_respondents: 20,
            max_respondents: 60,
            draws_per_respondent: 20,
            horizon: 12,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub records: Vec<PanelRecord>,
    /// Realized values keyed by target period.
    pub outcomes: BTreeMap<String, f64>,
    pub horizon: i32,
}

/// Generate a panel of binned probability forecasts.
///
/// Periods are monthly labels starting at `2000-01`. A latent level follows
/// `m_t = 2.5 + 0.8 (m_{t-1} - 2.5) + N(0, 1)` and a disagreement scale
/// `s_t ~ U(0.5, 3)` is drawn per period. Respondent `i` centers on
/// `m_t + N(0, s_t)` with spread `U(1, 4)`, makes `draws_per_respondent`
/// normal draws and reports the bin frequencies. The outcome for period
/// `t + horizon` is `m_t + N(0, 1.5)`. All randomness comes from ChaCha8
/// seeded with `seed`.
pub fn synthetic_panel(scheme: &BinScheme, config: &SyntheticConfig) -> Result<SyntheticPanel> {
    if config.min_respondents == 0 || config.min_respondents > config.max_respondents {
        return Err(Error::InvalidInput("invalid respondent range".into()));
    }
    if config.draws_per_respondent == 0 {
        return Err(Error::InvalidInput("draws per respondent must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let k = scheme.k();
    let mut level = 2.5;
    let mut records = Vec::new();
    let mut outcomes = BTreeMap::new();
    for t in 0..config.periods {
        level = 2.5 + 0.8 * (level - 2.5) + std_normal.sample(&mut rng);
        let spread_of_centers: f64 = rng.random_range(0.5..3.0);
        let period = shift_period("2000-01", t as i32)?;
        let n = rng.random_range(config.min_respondents..=config.max_respondents);
        for i in 0..n {
            let center = level + spread_of_centers * std_normal.sample(&mut rng);
            let sd: f64 = rng.random_range(1.0..4.0);
            let mut counts = vec![0usize; k];
            for _ in 0..config.draws_per_respondent {
                let x = center + sd * std_normal.sample(&mut rng);
                counts[scheme.category(x)?] += 1;
            }
            let probs = counts
                .iter()
                .map(|&c| c as f64 / config.draws_per_respondent as f64)
                .collect();
            records.push(PanelRecord {
                period: period.clone(),
                respondent: format!("r{t:03}-{i:03}"),
                probs,
            });
        }
        let realized = level + 1.5 * std_normal.sample(&mut rng);
        outcomes.insert(shift_period(&period, config.horizon)?, realized);
    }
    Ok(SyntheticPanel {
        records,
        outcomes,
        horizon: config.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(period: &str, id: &str, probs: &[f64]) -> PanelRecord {
        PanelRecord {
            period: period.into(),
            respondent: id.into(),
            probs: probs.to_vec(),
        }
    }

    fn one_hot(k: usize, i: usize) -> Vec<f64> {
        (0..k).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn survey_bin_mapping() {
        let s = BinScheme::inflation_survey();
        assert_eq!(s.k(), 10);
        assert_eq!(s.category(2.5).unwrap() + 1, 7);
        assert_eq!(s.category(4.5).unwrap() + 1, 8);
        assert_eq!(s.category(-8.0).unwrap() + 1, 2);
        assert_eq!(s.category(-100.0).unwrap(), 0);
        assert_eq!(s.category(1e9).unwrap(), 9);
        assert_eq!(s.category(12.0).unwrap(), 8);
        assert!(s.category(f64::NAN).is_err());
    }

    #[test]
    fn survey_midpoints() {
        let s = BinScheme::inflation_survey();
        assert_eq!(
            s.midpoints(),
            vec![-18.5, -10.0, -6.0, -3.0, -1.0, 1.0, 3.0, 6.0, 10.0, 18.5]
        );
        let t = s.with_truncation(-20.0, 30.0).unwrap();
        assert_eq!(t.midpoints()[0], -16.0);
        assert_eq!(t.midpoints()[9], 21.0);
    }

    #[test]
    fn bin_scheme_validation() {
        assert!(BinScheme::new(vec![1.0, 1.0], -5.0, 5.0).is_err());
        assert!(BinScheme::new(vec![0.0, 1.0], 0.0, 5.0).is_err());
        assert!(BinScheme::new(vec![], -1.0, 1.0).is_err());
    }

    #[test]
    fn single_respondent_has_no_disagreement() {
        let s = BinScheme::inflation_survey();
        let records = vec![
            rec("2020-01", "a", &[0.0, 0.0, 0.0, 0.1, 0.2, 0.4, 0.2, 0.1, 0.0, 0.0]),
            rec("2020-02", "b", &one_hot(10, 5)),
        ];
        let run = run_panel(&records, &s, &PanelConfig::default()).unwrap();
        assert_eq!(run.rows.len(), 2);
        for row in &run.rows {
            assert_eq!(row.rps.disagreement, 0.0);
            assert_eq!(row.se.disagreement, 0.0);
        }
    }

    #[test]
    fn opposite_extremes_rps_disagreement() {
        let s = BinScheme::inflation_survey();
        let records = vec![rec("t", "a", &one_hot(10, 0)), rec("t", "b", &one_hot(10, 9))];
        let run = run_panel(&records, &s, &PanelConfig::default()).unwrap();
        let row = &run.rows[0];
        assert!((row.rps.disagreement - 2.25).abs() < 1e-12);
        // Midpoints -18.5 and 18.5: variance of the pool is 18.5^2.
        assert!((row.se.disagreement - 18.5 * 18.5).abs() < 1e-9);
        assert!((row.rps_share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_distribution_pool_matches_component() {
        let s = BinScheme::inflation_survey();
        let p = [0.05, 0.05, 0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.05, 0.05];
        let records: Vec<_> = (0..5).map(|i| rec("t", &format!("r{i}"), &p)).collect();
        let run = run_panel(&records, &s, &PanelConfig::default()).unwrap();
        let spec = KernelSpec::rps(10).unwrap();
        let f: ForecastDistribution = CategoricalDist::new(spec.space(), p.to_vec()).unwrap().into();
        let erps = crate::scoring::entropy(&spec, &f).unwrap().value;
        assert!((run.rows[0].rps.pool - erps).abs() < 1e-12);
    }

    #[test]
    fn invalid_records_are_dropped_and_counted() {
        let s = BinScheme::inflation_survey();
        let mut bad = one_hot(10, 3);
        bad[4] = 0.5;
        let records = vec![
            rec("t", "ok", &one_hot(10, 3)),
            rec("t", "sum", &bad),
            rec("t", "len", &[1.0]),
            rec("t", "neg", &[-0.1, 1.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ];
        let run = run_panel(&records, &s, &PanelConfig::default()).unwrap();
        assert_eq!(run.dropped.dropped.len(), 3);
        assert_eq!(run.dropped.retained(), 1);
        assert_eq!(run.rows[0].respondents, 1);
    }

    #[test]
    fn supplied_weights_are_renormalized_per_period() {
        let s = BinScheme::inflation_survey();
        let records = vec![rec("t", "a", &one_hot(10, 0)), rec("t", "b", &one_hot(10, 9))];
        let mut map = HashMap::new();
        map.insert(("t".to_string(), "a".to_string()), 3.0);
        map.insert(("t".to_string(), "b".to_string()), 1.0);
        let config = PanelConfig {
            weights: PanelWeights::Supplied(map),
            ..PanelConfig::default()
        };
        let run = run_panel(&records, &s, &config).unwrap();
        // Weights 0.75 / 0.25: D_RPS = 9 * (0.75 * 0.25^2 + 0.25 * 0.75^2).
        assert!((run.rows[0].rps.disagreement - 9.0 * 0.1875).abs() < 1e-12);
    }

    #[test]
    fn panel_decompositions_per_rule() {
        let s = BinScheme::inflation_survey();
        let records = vec![rec("t", "a", &one_hot(10, 0)), rec("t", "b", &one_hot(10, 9))];
        let cfg = PanelConfig::default();
        let d = |rule| panel_decompositions(&records, &s, &cfg, rule).unwrap().0[0].decomposition.disagreement;
        assert!((d(Rule::Rps) - 2.25).abs() < 1e-12);
        assert!((d(Rule::Brier) - 0.25).abs() < 1e-12);
        assert!((d(Rule::Se) - 18.5 * 18.5).abs() < 1e-9);
        assert!((d(Rule::Crps) - 0.25 * 37.0).abs() < 1e-12);
        assert!(panel_decompositions(&records, &s, &cfg, Rule::Es).is_err());
    }

    #[test]
    fn percent_detection() {
        let mut rs = vec![rec("t", "a", &[50.0, 50.0]), rec("t", "b", &[100.0, 0.0])];
        assert!(to_fractions(&mut rs, PercentMode::Auto));
        assert_eq!(rs[0].probs, vec![0.5, 0.5]);
        let mut fr = vec![rec("t", "a", &[0.5, 0.5])];
        assert!(!to_fractions(&mut fr, PercentMode::Auto));
        assert!(to_fractions(&mut fr, PercentMode::Percent));
    }

    #[test]
    fn period_shift() {
        assert_eq!(shift_period("2013-06", 12).unwrap(), "2014-06");
        assert_eq!(shift_period("2013-12", 1).unwrap(), "2014-01");
        assert_eq!(shift_period("2013-01", -1).unwrap(), "2012-12");
        assert_eq!(shift_period("Q1", 0).unwrap(), "Q1");
        assert!(shift_period("Q1", 3).is_err());
    }

    #[test]
    fn realized_single_respondent_and_missing_outcome() {
        let s = BinScheme::inflation_survey();
        let records = vec![
            rec("2020-01", "a", &[0.0, 0.0, 0.0, 0.1, 0.2, 0.4, 0.2, 0.1, 0.0, 0.0]),
            rec("2020-02", "a", &one_hot(10, 5)),
        ];
        let mut outcomes = BTreeMap::new();
        outcomes.insert("2021-01".to_string(), 2.5);
        let run = realized_scores(&records, &s, &outcomes, 12, &PanelConfig::default()).unwrap();
        assert_eq!(run.rows.len(), 1);
        assert_eq!(run.missing_outcomes, vec!["2020-02".to_string()]);
        let row = &run.rows[0];
        assert_eq!(row.category, 6);
        assert!((row.pool_score - row.avg_score).abs() < 1e-15);
        assert_eq!(row.disagreement, 0.0);
    }

    #[test]
    fn correlations_basic() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(pearson(&x, &x), Some(1.0));
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[1.0; 4]), None);
    }

    #[test]
    fn correlations_need_three_rows() {
        assert!(component_correlations(&[]).is_err());
    }

    #[test]
    fn synthetic_panel_is_deterministic() {
        let s = BinScheme::inflation_survey();
        let cfg = SyntheticConfig {
            periods: 4,
            ..SyntheticConfig::default()
        };
        let a = synthetic_panel(&s, &cfg).unwrap();
        let b = synthetic_panel(&s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcomes.len(), 4);
        assert!(a.records.iter().all(|r| (r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }
}
