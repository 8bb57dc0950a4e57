use kernel_pool::scoring::{self, divergence, entropy};
use kernel_pool::survey::{
    component_correlations, panel_decompositions, realized_scores, run_panel, synthetic_panel, to_fractions,
    BinScheme, PanelConfig, PanelRecord, PanelWeights, SyntheticConfig,
};
use kernel_pool::verify::run_suite;
use kernel_pool::{
    decompose as decompose_pool, CategoricalDist, EmpiricalDist, ForecastDistribution, KernelSpec, Outcome,
    OutcomeSpace, PoolSpec, Rule,
};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::input::{self, WeightsFile};
use crate::output::{Cell, Report};
use crate::{BinArgs, CheckArgs, DecomposeArgs, PanelArgs, ScoreArgs};

fn warn(value: serde_json::Value) {
    eprintln!("{value}");
}

fn is_categorical(rule: Rule) -> bool {
    matches!(rule, Rule::Brier | Rule::Rps)
}

fn at_line(path: &str, line: u64) -> impl Fn(kernel_pool::Error) -> CliError + '_ {
    move |e| CliError::parse(path, Some(line), e.to_string())
}

/// Read forecasts for `rule` and build its kernel.
fn load_forecasts(
    rule: Rule,
    path: &str,
    a_matrix: Option<&str>,
) -> CliResult<(KernelSpec, Vec<(String, ForecastDistribution)>)> {
    if a_matrix.is_some() && rule != Rule::Mse {
        return Err(CliError::Input("--a-matrix applies only to --rule mse".into()));
    }
    if is_categorical(rule) {
        let rows = input::read_categorical(path)?;
        let k = rows[0].1.len();
        let spec = KernelSpec::for_rule(rule, k, None)?;
        let forecasts = rows
            .into_iter()
            .map(|(id, p, line)| {
                let d = CategoricalDist::new(spec.space(), p).map_err(at_line(path, line))?;
                Ok((id, d.into()))
            })
            .collect::<CliResult<Vec<_>>>()?;
        return Ok((spec, forecasts));
    }
    let (dim, samples) = input::read_samples(path)?;
    let a = a_matrix.map(input::read_matrix).transpose()?;
    if let Some(a) = &a {
        if a.len() != dim {
            return Err(CliError::Input(format!(
                "A matrix is {0}x{0} but forecasts have dimension {dim}",
                a.len()
            )));
        }
    }
    let spec = KernelSpec::for_rule(rule, dim, a)?;
    let forecasts = samples
        .into_iter()
        .map(|s| {
            let d = EmpiricalDist::new(spec.space(), s.points, s.weights)?;
            Ok((s.id, d.into()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((spec, forecasts))
}

fn parse_outcome(spec: &KernelSpec, fields: &[String], source: &str) -> CliResult<Outcome> {
    let bad = |m: String| CliError::Input(format!("{source}: {m}"));
    let numbers = || {
        fields
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(format!("'{f}' is not a finite number")))
            })
            .collect::<CliResult<Vec<_>>>()
    };
    let outcome = match spec.space() {
        OutcomeSpace::UnorderedCategories { k } | OutcomeSpace::OrderedCategories { k } => {
            let [f] = fields else {
                return Err(bad("expected one category".into()));
            };
            let c: usize = f
                .trim()
                .parse()
                .map_err(|_| bad(format!("'{f}' is not a category number")))?;
            if c == 0 || c > k {
                return Err(bad(format!("category {c} outside 1..={k}")));
            }
            Outcome::Category(c - 1)
        }
        OutcomeSpace::RealLine => {
            let v = numbers()?;
            if v.len() != 1 {
                return Err(bad(format!("expected one value, got {}", v.len())));
            }
            Outcome::Real(v[0])
        }
        OutcomeSpace::RealVector { dim } => {
            let v = numbers()?;
            if v.len() != dim {
                return Err(bad(format!("expected {dim} values, got {}", v.len())));
            }
            Outcome::Vector(v)
        }
    };
    Ok(outcome)
}

fn outcome_label(y: &Outcome) -> String {
    match y {
        Outcome::Real(x) => crate::output::format_g12(*x),
        Outcome::Vector(v) => v.iter().map(|x| crate::output::format_g12(*x)).collect::<Vec<_>>().join(" "),
        Outcome::Category(c) => (c + 1).to_string(),
    }
}

fn nonneg(value: f64, what: &str) -> CliResult<f64> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::Invariant(format!("{what} is {value}, expected a finite nonnegative value")))
    }
}

pub fn score(args: &ScoreArgs) -> CliResult<()> {
    let (spec, forecasts) = load_forecasts(args.rule, &args.forecasts, args.a_matrix.as_deref())?;
    let outcomes: Option<Vec<Outcome>> = if let Some(raw) = &args.outcome {
        let fields: Vec<String> = raw.split(',').map(str::to_string).collect();
        let y = parse_outcome(&spec, &fields, "--outcome")?;
        Some(vec![y; forecasts.len()])
    } else if let Some(path) = &args.outcomes {
        let mut map = input::read_forecast_outcomes(path)?;
        let ys = forecasts
            .iter()
            .map(|(id, _)| {
                let (fields, line) = map
                    .remove(id)
                    .ok_or_else(|| CliError::parse(path, None, format!("no outcome for forecast '{id}'")))?;
                parse_outcome(&spec, &fields, &format!("{path}:{line}"))
            })
            .collect::<CliResult<Vec<_>>>()?;
        if let Some(extra) = map.keys().min() {
            return Err(CliError::parse(path, None, format!("outcome for unknown forecast '{extra}'")));
        }
        Some(ys)
    } else {
        None
    };

    let mut report = if outcomes.is_some() {
        Report::new(&["forecast_id", "outcome", "score", "entropy"])
    } else {
        Report::new(&["forecast_id", "entropy"])
    };
    for (i, (id, f)) in forecasts.iter().enumerate() {
        let h = nonneg(entropy(&spec, f)?.value, "entropy")?;
        match &outcomes {
            Some(ys) => {
                let s = nonneg(scoring::score(&spec, f, &ys[i])?.value, "score")?;
                report.push(vec![id.as_str().into(), outcome_label(&ys[i]).into(), s.into(), h.into()]);
            }
            None => report.push(vec![id.as_str().into(), h.into()]),
        }
    }
    if let Some(path) = &args.divergences {
        let mut div = Report::new(&["forecast_a", "forecast_b", "divergence"]);
        for i in 0..forecasts.len() {
            for j in i + 1..forecasts.len() {
                let d = divergence(&spec, &forecasts[i].1, &forecasts[j].1)?.value;
                div.push(vec![
                    forecasts[i].0.as_str().into(),
                    forecasts[j].0.as_str().into(),
                    nonneg(d, "divergence")?.into(),
                ]);
            }
        }
        div.write(args.output.format, Some(path))?;
    }
    report.write(args.output.format, args.output.out.as_deref())
}

fn scheme(bins: &BinArgs) -> CliResult<BinScheme> {
    let (lo, hi) = bins
        .truncate
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
        .ok_or_else(|| CliError::Input(format!("--truncate expects LO,HI, got '{}'", bins.truncate)))?;
    let cuts = match &bins.bins {
        Some(path) => input::read_bins(path)?,
        None => BinScheme::inflation_survey().cuts().to_vec(),
    };
    Ok(BinScheme::new(cuts, lo, hi)?)
}

fn panel_config(weights: &str, bins: &BinArgs) -> CliResult<PanelConfig> {
    let weights = if weights == "equal" {
        PanelWeights::Equal
    } else {
        match input::read_weights(weights)? {
            WeightsFile::Panel(m) => PanelWeights::Supplied(m),
            WeightsFile::Forecasts(_) => {
                return Err(CliError::parse(weights, Some(1), "panel weights need period,respondent,weight"))
            }
        }
    };
    if !(bins.sum_tolerance >= 0.0) {
        return Err(CliError::Input("--sum-tolerance must be nonnegative".into()));
    }
    Ok(PanelConfig {
        weights,
        sum_tolerance: bins.sum_tolerance,
    })
}

fn load_panel(path: &str, bins: &BinArgs) -> CliResult<Vec<PanelRecord>> {
    let mut records = input::read_panel(path)?;
    if records.is_empty() {
        return Err(CliError::parse(path, None, "panel has no records"));
    }
    to_fractions(&mut records, bins.percent.into());
    Ok(records)
}

fn report_dropped(dropped: &kernel_pool::survey::DropReport) {
    if !dropped.dropped.is_empty() {
        warn(json!({
            "warning": "dropped records",
            "count": dropped.dropped.len(),
            "total": dropped.total,
            "records": dropped.dropped,
        }));
    }
}

pub fn decompose(args: &DecomposeArgs) -> CliResult<()> {
    if let Some(path) = &args.panel {
        if args.a_matrix.is_some() {
            return Err(CliError::Input("--a-matrix does not apply to panel input".into()));
        }
        let scheme = scheme(&args.bins)?;
        let config = panel_config(&args.weights, &args.bins)?;
        let records = load_panel(path, &args.bins)?;
        let (rows, dropped) = panel_decompositions(&records, &scheme, &config, args.rule)?;
        report_dropped(&dropped);
        let mut report = Report::new(&[
            "period",
            "respondents",
            "pool_entropy",
            "avg_entropy",
            "disagreement",
            "disagreement_share",
        ]);
        for r in &rows {
            let d = &r.decomposition;
            d.validate()?;
            report.push(vec![
                r.period.as_str().into(),
                r.respondents.into(),
                d.pool_entropy.into(),
                d.avg_component_entropy.into(),
                d.disagreement.into(),
                d.disagreement_share().into(),
            ]);
        }
        return report.write(args.output.format, args.output.out.as_deref());
    }

    let path = args.forecasts.as_deref().expect("clap requires forecasts or panel");
    let (spec, forecasts) = load_forecasts(args.rule, path, args.a_matrix.as_deref())?;
    let weights = if args.weights == "equal" {
        vec![1.0; forecasts.len()]
    } else {
        match input::read_weights(&args.weights)? {
            WeightsFile::Forecasts(mut m) => {
                let w = forecasts
                    .iter()
                    .map(|(id, _)| {
                        m.remove(id).ok_or_else(|| {
                            CliError::parse(&args.weights, None, format!("no weight for forecast '{id}'"))
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                if let Some(extra) = m.keys().min() {
                    return Err(CliError::parse(
                        &args.weights,
                        None,
                        format!("weight for unknown forecast '{extra}'"),
                    ));
                }
                w
            }
            WeightsFile::Panel(_) => {
                return Err(CliError::parse(&args.weights, Some(1), "expected forecast_id,weight"))
            }
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(CliError::Input("pool weights sum to zero".into()));
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let ids: Vec<String> = forecasts.iter().map(|(id, _)| id.clone()).collect();
    let pool = PoolSpec::new(forecasts.into_iter().map(|(_, f)| f).collect(), weights)?;
    let d = decompose_pool(&spec, &pool)?;
    d.validate()?;
    let mut report = Report::new(&["pool_entropy", "avg_entropy", "disagreement", "disagreement_share"]);
    report.push(vec![
        d.pool_entropy.into(),
        d.avg_component_entropy.into(),
        d.disagreement.into(),
        d.disagreement_share().into(),
    ]);
    if let Some(out) = &args.components {
        let mut comps = Report::new(&["forecast_id", "weight", "entropy", "divergence_to_pool"]);
        for (i, id) in ids.iter().enumerate() {
            let e = nonneg(entropy(&spec, &pool.components()[i])?.value, "entropy")?;
            comps.push(vec![
                id.as_str().into(),
                pool.weights()[i].into(),
                e.into(),
                d.per_component_divergence[i].into(),
            ]);
        }
        comps.write(args.output.format, Some(out))?;
    }
    report.write(args.output.format, args.output.out.as_deref())
}

pub fn check(args: &CheckArgs) -> CliResult<()> {
    if args.random == 0 {
        return Err(CliError::Input("--random must be positive".into()));
    }
    let suite = run_suite(args.random, args.seed, args.inject_broken_kernel);
    let mut report = Report::new(&["property", "cases", "max_residual", "tolerance", "passed"]);
    for p in &suite.properties {
        report.push(vec![
            p.name.as_str().into(),
            p.cases.into(),
            p.max_residual.into(),
            p.tolerance.into(),
            p.passed.into(),
        ]);
    }
    report.write(args.output.format, args.output.out.as_deref())?;
    let failures: Vec<_> = suite.properties.iter().filter(|p| !p.passed).collect();
    if failures.is_empty() {
        return Ok(());
    }
    for p in &failures {
        warn(json!({
            "failed": p.name,
            "max_residual": p.max_residual,
            "tolerance": p.tolerance,
            "detail": p.detail,
        }));
    }
    Err(CliError::Invariant(format!(
        "{} of {} properties failed: {}",
        failures.len(),
        suite.properties.len(),
        failures.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ")
    )))
}

fn write_panel_file(path: &str, scheme: &BinScheme, records: &[PanelRecord]) -> CliResult<()> {
    let mut cols = vec!["period".to_string(), "respondent".to_string()];
    cols.extend((1..=scheme.k()).map(|i| format!("p{i}")));
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Input(format!("cannot write CSV: {e}"));
    w.write_record(&cols).map_err(io)?;
    for r in records {
        let mut row = vec![r.period.clone(), r.respondent.clone()];
        row.extend(r.probs.iter().map(|p| crate::output::format_g12(*p)));
        w.write_record(&row).map_err(io)?;
    }
    let mut bytes = format!("# kernel-pool panel v{}\n", input::FORMAT_VERSION).into_bytes();
    bytes.extend(w.into_inner().map_err(|e| CliError::Input(e.to_string()))?);
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })
}

pub fn panel(args: &PanelArgs) -> CliResult<()> {
    let scheme = scheme(&args.bins)?;
    let config = panel_config(&args.weights, &args.bins)?;
    let (records, mut outcomes, mut horizon) = if args.synthetic {
        let synth = synthetic_panel(
            &scheme,
            &SyntheticConfig {
                periods: args.synthetic_periods,
                seed: args.seed,
                ..SyntheticConfig::default()
            },
        )?;
        if let Some(path) = &args.synthetic_out {
            write_panel_file(path, &scheme, &synth.records)?;
        }
        (synth.records, Some(synth.outcomes), synth.horizon)
    } else {
        let path = args.panel.as_deref().expect("clap requires panel or synthetic");
        (load_panel(path, &args.bins)?, None, 0)
    };
    if let Some(path) = &args.outcomes {
        outcomes = Some(input::read_period_values(path)?);
    }
    if let Some(h) = args.horizon {
        horizon = h;
    }

    let run = run_panel(&records, &scheme, &config)?;
    report_dropped(&run.dropped);
    let mut report = Report::new(&[
        "period",
        "respondents",
        "erps_pool",
        "erps_average",
        "disagreement_rps",
        "variance_pool",
        "variance_average",
        "disagreement_se",
        "share_rps",
        "share_se",
    ]);
    for r in &run.rows {
        for t in [r.rps, r.se] {
            let resid = (t.pool - t.average - t.disagreement).abs();
            if resid > kernel_pool::pooling::DECOMPOSITION_TOL * t.pool.max(1.0) {
                return Err(CliError::Invariant(format!("period {}: decomposition residual {resid:e}", r.period)));
            }
        }
        report.push(vec![
            r.period.as_str().into(),
            r.respondents.into(),
            r.rps.pool.into(),
            r.rps.average.into(),
            r.rps.disagreement.into(),
            r.se.pool.into(),
            r.se.average.into(),
            r.se.disagreement.into(),
            r.rps_share.into(),
            r.se_share.into(),
        ]);
    }

    if let Some(path) = &args.correlations {
        let table = component_correlations(&run.rows)?;
        let mut cols = vec!["series"];
        cols.extend(table.labels);
        let mut corr = Report::new(&cols);
        for (i, label) in table.labels.iter().enumerate() {
            let mut row: Vec<Cell> = vec![(*label).into()];
            row.extend(table.values[i].iter().map(|v| Cell::from(*v)));
            corr.push(row);
        }
        corr.write(args.output.format, Some(path))?;
    }

    let wants_realized = args.realized.is_some() || args.respondent_scores.is_some();
    match (&outcomes, wants_realized) {
        (Some(outcomes), true) => {
            let realized = realized_scores(&records, &scheme, outcomes, horizon, &config)?;
            if !realized.missing_outcomes.is_empty() {
                warn(json!({
                    "warning": "periods without outcome",
                    "horizon": horizon,
                    "periods": realized.missing_outcomes,
                }));
            }
            if let Some(path) = &args.realized {
                let mut rep = Report::new(&[
                    "period",
                    "target_period",
                    "outcome",
                    "category",
                    "respondents",
                    "pool_rps",
                    "average_rps",
                    "disagreement",
                ]);
                for r in &realized.rows {
                    rep.push(vec![
                        r.period.as_str().into(),
                        r.target_period.as_str().into(),
                        r.outcome.into(),
                        (r.category + 1).into(),
                        r.respondents.into(),
                        r.pool_score.into(),
                        r.avg_score.into(),
                        r.disagreement.into(),
                    ]);
                }
                rep.write(args.output.format, Some(path))?;
            }
            if let Some(path) = &args.respondent_scores {
                let mut rep = Report::new(&["period", "respondent", "rps", "pool_rps"]);
                for r in &realized.rows {
                    for (id, s) in &r.per_respondent {
                        rep.push(vec![r.period.as_str().into(), id.as_str().into(), (*s).into(), r.pool_score.into()]);
                    }
                }
                rep.write(args.output.format, Some(path))?;
            }
        }
        (None, true) => {
            return Err(CliError::Input(
                "--realized and --respondent-scores need --outcomes (or --synthetic)".into(),
            ))
        }
        _ => {}
    }
    report.write(args.output.format, args.output.out.as_deref())
}
