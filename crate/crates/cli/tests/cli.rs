use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kernel-pool"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn kernel-pool")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    serde_json::from_str(err.lines().last().expect("stderr line")).expect("json error record")
}

fn json_rows(o: &Output) -> Vec<Value> {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice::<Vec<Value>>(&o.stdout).unwrap()
}

const POINT_MASSES: &str = "# kernel-pool samples v1\nforecast_id,weight,x1\na,,0\nb,,2\n";

#[test]
fn score_at_the_mass_point_is_zero() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "forecast_id,weight,x1\na,,3.5\nb,1,3.5\n");
    for rule in ["se", "crps", "es"] {
        let o = run(&["score", "--rule", rule, "--forecasts", s(&f), "--outcome", "3.5", "--format", "json"]);
        for row in json_rows(&o) {
            assert_eq!(row["score"], 0.0, "{rule}");
        }
    }
}

#[test]
fn squared_error_scores_of_point_masses() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", POINT_MASSES);
    let div = d.path().join("div.csv");
    let o = run(&["score", "--rule", "se", "--forecasts", s(&f), "--outcome", "5", "--divergences", s(&div)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "forecast_id,outcome,score,entropy\na,5,25,0\nb,5,9,0\n");
    assert_eq!(std::fs::read_to_string(div).unwrap(), "forecast_a,forecast_b,divergence\na,b,4\n");
}

#[test]
fn malformed_probability_row_is_named() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "forecast_id,p1,p2\na,1,0\nb,0.7,0.7\n");
    let o = run(&["score", "--rule", "brier", "--forecasts", s(&f), "--outcome", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "parse");
    assert_eq!(e["line"], 3);
    assert!(e["message"].as_str().unwrap().contains("1.4"));

    let g = write(&d, "g.csv", "forecast_id,weight,x1\na,,zero\n");
    let o = run(&["score", "--rule", "se", "--forecasts", s(&g)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["line"], 2);
}

#[test]
fn per_forecast_outcomes_and_categories() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "forecast_id,p1,p2,p3\na,0.2,0.5,0.3\nb,1,0,0\n");
    let y = write(&d, "y.csv", "forecast_id,y\nb,1\na,3\n");
    let o = run(&["score", "--rule", "rps", "--forecasts", s(&f), "--outcomes", s(&y), "--format", "json"]);
    let rows = json_rows(&o);
    // RPS of (0.2, 0.5, 0.3) at category 3: (0.2 - 0)^2 + (0.7 - 0)^2.
    assert!((rows[0]["score"].as_f64().unwrap() - 0.53).abs() < 1e-15);
    assert_eq!(rows[1]["score"], 0.0);
    let o = run(&["score", "--rule", "rps", "--forecasts", s(&f), "--outcome", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn decompose_identical_components() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "forecast_id,weight,x1,x2\na,,0,1\na,,2,2\nb,,0,1\nb,,2,2\n");
    for rule in ["es", "mse"] {
        let rows = json_rows(&run(&["decompose", "--rule", rule, "--forecasts", s(&f), "--format", "json"]));
        assert_eq!(rows[0]["disagreement"], 0.0, "{rule}");
    }
}

#[test]
fn decompose_brier_opposite_masses() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "forecast_id,p1,p2\na,1,0\nb,0,1\n");
    let o = run(&["decompose", "--rule", "brier", "--forecasts", s(&f)]);
    assert_eq!(
        stdout(&o),
        "pool_entropy,avg_entropy,disagreement,disagreement_share\n0.25,0,0.25,1\n"
    );
}

#[test]
fn decompose_with_weights_and_matrix() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "forecast_id,weight,x1,x2\na,,0,0\nb,,1,1\n");
    let a = write(&d, "a.csv", "# kernel-pool matrix v1\n2,0\n0,3\n");
    let w = write(&d, "w.csv", "forecast_id,weight\nb,3\na,1\n");
    let o = run(&[
        "decompose", "--rule", "mse", "--forecasts", s(&f), "--a-matrix", s(&a), "--weights", s(&w), "--format", "json",
    ]);
    // Means (0,0) and (1,1), weights 1/4 and 3/4: D = 1/4 * 3/4 * (2 + 3).
    let rows = json_rows(&o);
    assert!((rows[0]["disagreement"].as_f64().unwrap() - 0.9375).abs() < 1e-15);

    let bad = write(&d, "bad.csv", "1,2\n2,1\n");
    let o = run(&["decompose", "--rule", "mse", "--forecasts", s(&f), "--a-matrix", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_component_pools_have_no_disagreement() {
    let d = TempDir::new().unwrap();
    let samples = write(&d, "s.csv", "forecast_id,weight,x1\na,0.2,1\na,0.8,4\n");
    let cats = write(&d, "c.csv", "forecast_id,p1,p2,p3\na,0.2,0.3,0.5\n");
    for (rule, f) in [("se", &samples), ("crps", &samples), ("es", &samples), ("mse", &samples), ("brier", &cats), ("rps", &cats)] {
        let rows = json_rows(&run(&["decompose", "--rule", rule, "--forecasts", s(f), "--format", "json"]));
        assert_eq!(rows[0]["disagreement"], 0.0, "{rule}");
    }
}

#[test]
fn energy_score_forty_versus_five_thousand() {
    let d = TempDir::new().unwrap();
    let small: Vec<[f64; 2]> = (0..40)
        .map(|i| {
            let t = i as f64;
            [1.0 + 0.5 * (t * 0.7).sin(), 0.5 + 0.5 * (t * 1.3).cos()]
        })
        .collect();
    let large: Vec<[f64; 2]> = (0..5000)
        .map(|i| {
            let t = i as f64;
            [(t * 0.013).sin() * 1.5, (t * 0.0071).cos() * (t * 0.002).sin()]
        })
        .collect();
    let mut body = String::from("forecast_id,weight,x1,x2\n");
    for p in &small {
        body.push_str(&format!("small,,{:?},{:?}\n", p[0], p[1]));
    }
    for p in &large {
        body.push_str(&format!("large,,{:?},{:?}\n", p[0], p[1]));
    }
    let f = write(&d, "f.csv", &body);
    let rows = json_rows(&run(&["decompose", "--rule", "es", "--forecasts", s(&f), "--format", "json"]));
    let got = rows[0]["disagreement"].as_f64().unwrap();

    let norm = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mean = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        let rows: Vec<f64> = a.iter().map(|x| b.iter().map(|y| norm(x, y)).sum::<f64>() / b.len() as f64).collect();
        rows.iter().sum::<f64>() / a.len() as f64
    };
    let oracle = 0.25 * mean(&small, &large) - 0.125 * mean(&small, &small) - 0.125 * mean(&large, &large);
    assert!((got - oracle).abs() <= 1e-9 * oracle.abs(), "{got} vs {oracle}");
}

#[test]
fn check_suite_passes() {
    let o = run(&["check", "--random", "1000", "--seed", "7", "--format", "json"]);
    let rows = json_rows(&o);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r["passed"], true, "{r}");
        assert!(r["max_residual"].as_f64().unwrap() <= r["tolerance"].as_f64().unwrap());
    }
}

#[test]
fn injected_broken_kernel_fails_check() {
    let o = run(&["check", "--random", "12", "--inject-broken-kernel"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    let first: Value = serde_json::from_str(err.lines().next().unwrap()).unwrap();
    assert_eq!(first["failed"], "pool_minimizes_divergence");
    assert!(first["detail"].as_str().unwrap().contains("gap -"));
    assert_eq!(stderr_json(&o)["error"], "invariant");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let d = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = d.path().join(format!("panel{i}.json"));
        let corr = d.path().join(format!("corr{i}.csv"));
        let o = run(&[
            "panel", "--synthetic", "--synthetic-periods", "12", "--seed", "3", "--format", "json", "--out", s(&out),
            "--correlations", s(&corr),
        ]);
        assert!(o.status.success());
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(&corr).unwrap()));
        let c = run(&["check", "--random", "50", "--seed", "3"]);
        outputs.push((c.stdout, Vec::new()));
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
}

#[test]
fn panel_from_file_with_percentages_and_bad_rows() {
    let d = TempDir::new().unwrap();
    let panel = write(
        &d,
        "p.csv",
        "# kernel-pool panel v1\nperiod,respondent,p1,p2,p3,p4,p5,p6,p7,p8,p9,p10\n\
         2020-01,a,100,0,0,0,0,0,0,0,0,0\n\
         2020-01,b,0,0,0,0,0,0,0,0,0,100\n\
         2020-01,c,50,0,0,0,0,0,0,0,0,20\n\
         2020-02,a,0,0,0,0,10,40,50,0,0,0\n\
         2020-02,b,0,0,0,0,10,40,,50,0,0\n",
    );
    let outcomes = write(&d, "y.csv", "period,value\n2021-01,2.5\n");
    let realized = d.path().join("r.csv");
    let o = run(&[
        "panel", "--panel", s(&panel), "--outcomes", s(&outcomes), "--horizon", "12", "--realized", s(&realized),
        "--format", "json",
    ]);
    let rows = json_rows(&o);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["respondents"], 2);
    assert!((rows[0]["disagreement_rps"].as_f64().unwrap() - 2.25).abs() < 1e-12);
    assert_eq!(rows[1]["disagreement_rps"], 0.0);
    assert_eq!(rows[1]["disagreement_se"], 0.0);

    let warnings: Vec<Value> = String::from_utf8(o.stderr.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(warnings[0]["count"], 2);
    assert_eq!(warnings[1]["periods"][0], "2020-02");

    let r: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(realized).unwrap()).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["category"], 7);
    let (avg, pool, dis) = (
        r[0]["average_rps"].as_f64().unwrap(),
        r[0]["pool_rps"].as_f64().unwrap(),
        r[0]["disagreement"].as_f64().unwrap(),
    );
    assert!((avg - pool - dis).abs() < 1e-12);
}

#[test]
fn panel_decompose_by_rule_and_truncation() {
    let d = TempDir::new().unwrap();
    let panel = write(
        &d,
        "p.csv",
        "period,respondent,p1,p2,p3\nq1,a,1,0,0\nq1,b,0,0,1\n",
    );
    let bins = write(&d, "b.csv", "# kernel-pool bins v1\ncut\n0\n1\n");
    let rows = json_rows(&run(&[
        "decompose", "--rule", "se", "--panel", s(&panel), "--bins", s(&bins), "--truncate", "-3,5", "--format", "json",
    ]));
    // Midpoints -1.5 and 3: D = variance of the pool = 2.25^2.
    assert!((rows[0]["disagreement"].as_f64().unwrap() - 5.0625).abs() < 1e-12);
    let o = run(&["decompose", "--rule", "es", "--panel", s(&panel), "--bins", s(&bins)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["decompose", "--rule", "se", "--panel", s(&panel), "--bins", s(&bins), "--truncate", "0.5,5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn version_tag_mismatch_is_rejected() {
    let d = TempDir::new().unwrap();
    let f = write(&d, "f.csv", "# kernel-pool samples v9\nforecast_id,weight,x1\na,,1\n");
    let o = run(&["score", "--rule", "se", "--forecasts", s(&f)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["line"], 1);
}

#[test]
fn usage_errors_are_json() {
    let o = run(&["score", "--rule", "log", "--forecasts", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
    let o = run(&["--help"]);
    assert!(o.status.success());
}

#[test]
fn synthetic_panel_round_trips_through_a_file() {
    let d = TempDir::new().unwrap();
    let file = d.path().join("syn.csv");
    let a = run(&["panel", "--synthetic", "--synthetic-periods", "6", "--synthetic-out", s(&file)]);
    assert!(a.status.success());
    let b = run(&["panel", "--panel", s(&file)]);
    assert!(b.status.success());
    let parse = |o: &Output| -> Vec<Vec<f64>> {
        stdout(o)
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(2).map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    for (x, y) in parse(&a).iter().zip(parse(&b)) {
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
        }
    }
}
