//! Readers for the CSV input formats.
//!
//! Every file may start with a version tag such as `# kernel-pool panel v1`.
//! Other lines starting with `#` are comments. Fields follow RFC 4180
//! quoting, so identifiers containing commas must be double-quoted.

use std::collections::{BTreeMap, HashMap};

use kernel_pool::survey::PanelRecord;

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

/// A parsed CSV file: header plus records with their line numbers.
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn err(&self, line: u64, message: impl Into<String>) -> CliError {
        CliError::parse(&self.path, Some(line), message)
    }

    fn number(&self, line: u64, row: &[String], col: usize) -> CliResult<f64> {
        let raw = row[col].trim();
        raw.parse::<f64>().map_err(|_| {
            self.err(
                line,
                format!("column '{}': '{raw}' is not a number", self.header[col]),
            )
        })
    }
}

fn read_text(path: &str) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })
}

fn check_version_tag(path: &str, text: &str, kind: &str) -> CliResult<()> {
    let Some(first) = text.lines().next() else {
        return Ok(());
    };
    let Some(rest) = first.trim().strip_prefix('#') else {
        return Ok(());
    };
    let words: Vec<&str> = rest.split_whitespace().collect();
    if words.first() != Some(&"kernel-pool") {
        return Ok(());
    }
    let tag_err = |m: String| CliError::parse(path, Some(1), m);
    match words.as_slice() {
        [_, k, v] => {
            if *k != kind {
                return Err(tag_err(format!("file is tagged '{k}', expected '{kind}'")));
            }
            let version = v
                .strip_prefix('v')
                .and_then(|n| n.parse::<u32>().ok())
                .ok_or_else(|| tag_err(format!("malformed version '{v}'")))?;
            if version != FORMAT_VERSION {
                return Err(tag_err(format!(
                    "unsupported {kind} format version {version}, expected {FORMAT_VERSION}"
                )));
            }
            Ok(())
        }
        _ => Err(tag_err(format!("malformed version tag '{}'", first.trim()))),
    }
}

/// Read a CSV file with an optional version tag.
pub fn read_table(path: &str, kind: &str, has_header: bool) -> CliResult<Table> {
    let text = read_text(path)?;
    check_version_tag(path, &text, kind)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = if has_header {
        reader
            .headers()
            .map_err(|e| csv_error(path, &e))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, &e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if has_header && rec.len() != header.len() {
            return Err(CliError::parse(
                path,
                Some(line),
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if has_header && header.is_empty() {
        return Err(CliError::parse(path, None, "missing header"));
    }
    Ok(Table {
        path: path.to_string(),
        header,
        rows,
    })
}

fn csv_error(path: &str, e: &csv::Error) -> CliError {
    let line = e.position().map(|p| p.line());
    CliError::parse(path, line, e.to_string())
}

fn expect_prefix(t: &Table, names: &[&str]) -> CliResult<()> {
    let ok = names.len() <= t.header.len()
        && names.iter().zip(&t.header).all(|(n, h)| h.eq_ignore_ascii_case(n));
    if ok {
        Ok(())
    } else {
        Err(CliError::parse(
            &t.path,
            Some(1),
            format!("header must start with {}", names.join(",")),
        ))
    }
}

/// Forecasts given as weighted samples: `forecast_id,weight,x1,...,xd`.
pub struct SampleForecast {
    pub id: String,
    pub points: Vec<Vec<f64>>,
    /// Normalized weights.
    pub weights: Vec<f64>,
}

/// Read an empirical forecast file. Rows sharing a `forecast_id` form one
/// forecast, in order of first appearance. A blank weight column for every
/// row of a forecast means equal weights; otherwise weights must be
/// nonnegative and are normalized per forecast.
pub fn read_samples(path: &str) -> CliResult<(usize, Vec<SampleForecast>)> {
    let t = read_table(path, "samples", true)?;
    expect_prefix(&t, &["forecast_id", "weight"])?;
    let dim = t.header.len() - 2;
    if dim == 0 {
        return Err(CliError::parse(path, Some(1), "no coordinate columns"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<Vec<f64>>, Vec<Option<f64>>, u64)> = HashMap::new();
    for (line, row) in &t.rows {
        let id = row[0].clone();
        if id.is_empty() {
            return Err(t.err(*line, "empty forecast_id"));
        }
        let w = if row[1].trim().is_empty() {
            None
        } else {
            let w = t.number(*line, row, 1)?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(t.err(*line, format!("invalid weight {w}")));
            }
            Some(w)
        };
        let x = (2..row.len()).map(|c| t.number(*line, row, c)).collect::<CliResult<Vec<_>>>()?;
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(t.err(*line, format!("non-finite coordinate {v}")));
        }
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (Vec::new(), Vec::new(), *line)
        });
        entry.0.push(x);
        entry.1.push(w);
    }
    if order.is_empty() {
        return Err(CliError::parse(path, None, "no forecasts"));
    }
    let forecasts = order
        .into_iter()
        .map(|id| {
            let (points, raw, line) = groups.remove(&id).expect("grouped");
            let weights = if raw.iter().all(Option::is_none) {
                vec![1.0 / points.len() as f64; points.len()]
            } else if raw.iter().all(Option::is_some) {
                let w: Vec<f64> = raw.into_iter().map(Option::unwrap).collect();
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(t.err(line, format!("forecast '{id}' has zero total weight")));
                }
                w.into_iter().map(|x| x / total).collect()
            } else {
                return Err(t.err(line, format!("forecast '{id}' mixes blank and explicit weights")));
            };
            Ok(SampleForecast { id, points, weights })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((dim, forecasts))
}

/// Categorical forecasts: `forecast_id,p1,...,pk`, one row per forecast.
pub fn read_categorical(path: &str) -> CliResult<Vec<(String, Vec<f64>, u64)>> {
    let t = read_table(path, "categorical", true)?;
    expect_prefix(&t, &["forecast_id"])?;
    if t.header.len() < 3 {
        return Err(CliError::parse(path, Some(1), "need at least two probability columns"));
    }
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, row) in &t.rows {
        let id = row[0].clone();
        if let Some(prev) = seen.insert(id.clone(), *line) {
            return Err(t.err(*line, format!("forecast '{id}' repeats line {prev}")));
        }
        let p = (1..row.len()).map(|c| t.number(*line, row, c)).collect::<CliResult<Vec<_>>>()?;
        out.push((id, p, *line));
    }
    if out.is_empty() {
        return Err(CliError::parse(path, None, "no forecasts"));
    }
    Ok(out)
}

/// Panel of binned probabilities: `period,respondent,p1,...,pk`.
///
/// Blank probabilities are read as missing; such rows are dropped later
/// with the other invalid responses.
pub fn read_panel(path: &str) -> CliResult<Vec<PanelRecord>> {
    let t = read_table(path, "panel", true)?;
    expect_prefix(&t, &["period", "respondent"])?;
    if t.header.len() < 4 {
        return Err(CliError::parse(path, Some(1), "need at least two probability columns"));
    }
    t.rows
        .iter()
        .map(|(line, row)| {
            let probs = (2..row.len())
                .map(|c| {
                    if row[c].trim().is_empty() {
                        Ok(f64::NAN)
                    } else {
                        t.number(*line, row, c)
                    }
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(PanelRecord {
                period: row[0].clone(),
                respondent: row[1].clone(),
                probs,
            })
        })
        .collect()
}

pub enum WeightsFile {
    Forecasts(HashMap<String, f64>),
    Panel(HashMap<(String, String), f64>),
}

/// `forecast_id,weight` or `period,respondent,weight`.
pub fn read_weights(path: &str) -> CliResult<WeightsFile> {
    let t = read_table(path, "weights", true)?;
    let panel = t.header.len() == 3;
    if panel {
        expect_prefix(&t, &["period", "respondent", "weight"])?;
    } else {
        expect_prefix(&t, &["forecast_id", "weight"])?;
        if t.header.len() != 2 {
            return Err(CliError::parse(path, Some(1), "expected forecast_id,weight"));
        }
    }
    let wcol = t.header.len() - 1;
    let mut fmap = HashMap::new();
    let mut pmap = HashMap::new();
    for (line, row) in &t.rows {
        let w = t.number(*line, row, wcol)?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(t.err(*line, format!("invalid weight {w}")));
        }
        let dup = if panel {
            pmap.insert((row[0].clone(), row[1].clone()), w).is_some()
        } else {
            fmap.insert(row[0].clone(), w).is_some()
        };
        if dup {
            return Err(t.err(*line, "duplicate weight entry"));
        }
    }
    Ok(if panel {
        WeightsFile::Panel(pmap)
    } else {
        WeightsFile::Forecasts(fmap)
    })
}

/// Dense matrix, one row per line, no header.
pub fn read_matrix(path: &str) -> CliResult<Vec<Vec<f64>>> {
    let t = read_table(path, "matrix", false)?;
    let rows = t
        .rows
        .iter()
        .map(|(line, row)| {
            row.iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| CliError::parse(path, Some(*line), format!("'{f}' is not a number")))
                })
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(CliError::parse(path, None, "empty matrix"));
    }
    if let Some((line, _)) = t.rows.iter().find(|(_, r)| r.len() != rows.len()) {
        return Err(CliError::parse(path, Some(*line), "matrix must be square"));
    }
    Ok(rows)
}

/// Interior cut points: header `cut`, one value per row.
pub fn read_bins(path: &str) -> CliResult<Vec<f64>> {
    let t = read_table(path, "bins", true)?;
    expect_prefix(&t, &["cut"])?;
    t.rows.iter().map(|(line, row)| t.number(*line, row, 0)).collect()
}

/// Realized values: `period,value`.
pub fn read_period_values(path: &str) -> CliResult<BTreeMap<String, f64>> {
    let t = read_table(path, "outcomes", true)?;
    expect_prefix(&t, &["period", "value"])?;
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        let v = t.number(*line, row, 1)?;
        if !v.is_finite() {
            return Err(t.err(*line, format!("non-finite outcome {v}")));
        }
        if out.insert(row[0].clone(), v).is_some() {
            return Err(t.err(*line, format!("duplicate period '{}'", row[0])));
        }
    }
    Ok(out)
}

/// Per-forecast outcomes for scoring: `forecast_id,y1,...,yd`.
pub fn read_forecast_outcomes(path: &str) -> CliResult<HashMap<String, (Vec<String>, u64)>> {
    let t = read_table(path, "outcomes", true)?;
    expect_prefix(&t, &["forecast_id"])?;
    let mut out = HashMap::new();
    for (line, row) in &t.rows {
        if out.insert(row[0].clone(), (row[1..].to_vec(), *line)).is_some() {
            return Err(t.err(*line, format!("duplicate forecast '{}'", row[0])));
        }
    }
    Ok(out)
}
