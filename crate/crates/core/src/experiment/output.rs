use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{aggregate, Aggregates, MetricsRow, RefinedMetrics, RunSummary};
use super::ExperimentConfig;
use crate::error::{Error, Result};

const METRICS_HEADER: [&str; 9] = [
    "run_id",
    "d",
    "k",
    "L",
    "noise_psi",
    "recovery_rate",
    "avg_square_error",
    "avg_weight_error",
    "avg_iterations",
];

fn footer(cfg: &ExperimentConfig) -> String {
    let mut s = String::from("# config\n");
    for line in cfg.to_text().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>, cfg: &ExperimentConfig) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Parse { line: 0, message: e.to_string() };
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    let mut s = String::from_utf8(bytes).expect("csv output is utf-8");
    s.push_str(&footer(cfg));
    Ok(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    version: &'a str,
    wall_clock_secs: f64,
    config: &'a ExperimentConfig,
    aggregates: &'a Aggregates,
    rows: &'a [MetricsRow],
    repeats: Vec<RepeatDoc<'a>>,
}

#[derive(Serialize)]
struct RepeatDoc<'a> {
    run_id: &'a str,
    seed: u64,
    noise_achieved: f64,
    shortfall: usize,
    refined: &'a Option<RefinedMetrics>,
}

/// Writes `metrics.csv`, `curve.csv`, `trials.csv`, `refinement_trace.csv`
/// and `summary.json` into `dir`, creating it if needed. Every CSV ends with
/// the config echo as `#` comment lines.
pub fn emit_outputs(summary: &RunSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &summary.config;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &text)?;
        written.push(p);
        Ok(())
    };

    put(
        "metrics.csv",
        csv_text(
            &METRICS_HEADER,
            summary.rows.iter().map(|r| {
                vec![
                    r.run_id.clone(),
                    r.d.to_string(),
                    r.k.to_string(),
                    r.l.to_string(),
                    r.noise_psi.to_string(),
                    r.recovery_rate.to_string(),
                    r.avg_square_error.to_string(),
                    r.avg_weight_error.to_string(),
                    r.avg_iterations.to_string(),
                ]
            }),
            cfg,
        )?,
    )?;
    put(
        "curve.csv",
        csv_text(
            &["L_prefix", "recovery_rate"],
            summary.curve.iter().map(|c| vec![c.l_prefix.to_string(), c.recovery_rate.to_string()]),
            cfg,
        )?,
    )?;
    let order = cfg.order;
    let mut trial_header: Vec<String> = ["run_id", "trial_id", "init_method", "iterations", "stop_reason", "weight", "matched_component"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    trial_header.extend((0..order).map(|r| match r {
        0..=2 => format!("dist_{}", ['a', 'b', 'c'][r]),
        _ => format!("dist_{}", r + 1),
    }));
    trial_header.extend(["square_error", "weight_error", "recovered"].map(String::from));
    let header_refs: Vec<&str> = trial_header.iter().map(String::as_str).collect();
    put(
        "trials.csv",
        csv_text(
            &header_refs,
            summary.repeats.iter().flat_map(|rep| {
                rep.trials.iter().map(move |t| {
                    let mut row = vec![
                        t.run_id.clone(),
                        t.trial_id.to_string(),
                        t.init_method.to_string(),
                        t.iterations.to_string(),
                        t.stop_reason.to_string(),
                        t.weight.to_string(),
                        t.nearest_truth.map_or_else(String::new, |j| j.to_string()),
                    ];
                    row.extend((0..order).map(|r| t.dists.get(r).map_or_else(String::new, |x| x.to_string())));
                    row.push(t.square_error.to_string());
                    row.push(t.weight_error.to_string());
                    row.push(t.recovered.to_string());
                    row
                })
            }),
            cfg,
        )?,
    )?;
    put(
        "refinement_trace.csv",
        csv_text(
            &["run_id", "sweep", "combined_error", "max_frobenius_error", "weight_error", "max_col_error", "max_spectral_norm", "frozen_columns"],
            summary.repeats.iter().flat_map(|rep| {
                rep.trace.iter().map(|s| {
                    vec![
                        rep.run_id.clone(),
                        s.sweep.to_string(),
                        opt_f(s.combined_error()),
                        opt_f(s.frobenius_error.as_ref().map(|v| v.iter().copied().fold(0.0, f64::max))),
                        opt_f(s.weight_error),
                        opt_f(s.max_col_error),
                        s.spectral_norms.iter().copied().fold(0.0, f64::max).to_string(),
                        s.frozen_columns.to_string(),
                    ]
                })
            }),
            cfg,
        )?,
    )?;
    let doc = SummaryDoc {
        version: &summary.version,
        wall_clock_secs: summary.wall_clock_secs,
        config: cfg,
        aggregates: &summary.aggregates,
        rows: &summary.rows,
        repeats: summary
            .repeats
            .iter()
            .map(|r| RepeatDoc {
                run_id: &r.run_id,
                seed: r.seed,
                noise_achieved: r.noise_achieved,
                shortfall: r.shortfall,
                refined: &r.refined,
            })
            .collect(),
    };
    put("summary.json", serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n")?;
    Ok(written)
}

/// Reads the rows of a `metrics.csv`, skipping the footer.
pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() }))
        .collect()
}

/// Config echoed in the footer of any emitted CSV.
pub fn read_footer(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body: String = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains('='))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(&body)?;
    Ok(cfg)
}

/// Recomputes the aggregates from `rows` and compares with `expected`.
pub fn verify_aggregates(rows: &[MetricsRow], expected: &Aggregates, tol: f64) -> bool {
    let got = aggregate(rows);
    let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol * b.abs().max(1.0);
    close(got.recovery_rate, expected.recovery_rate)
        && close(got.avg_square_error, expected.avg_square_error)
        && close(got.avg_weight_error, expected.avg_weight_error)
        && close(got.avg_iterations, expected.avg_iterations)
}

/// One line of the combined grid table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub k: usize,
    pub avg_weight_error: f64,
    pub avg_square_error: f64,
    pub avg_iterations: f64,
    pub recovery_rate: f64,
}

pub fn table1_table(summaries: &[RunSummary]) -> Vec<Table1Row> {
    summaries
        .iter()
        .map(|s| Table1Row {
            k: s.config.rank,
            avg_weight_error: s.aggregates.avg_weight_error,
            avg_square_error: s.aggregates.avg_square_error,
            avg_iterations: s.aggregates.avg_iterations,
            recovery_rate: s.aggregates.recovery_rate,
        })
        .collect()
}

/// Full outputs per rank under `dir/k<rank>/` plus the combined `table1.csv`.
pub fn emit_table1(summaries: &[RunSummary], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in summaries {
        emit_outputs(s, &dir.join(format!("k{}", s.config.rank)))?;
    }
    let rows = table1_table(summaries);
    let cfg = summaries.first().map(|s| s.config.clone()).unwrap_or_default();
    let text = csv_text(
        &["k", "avg_weight_error", "avg_square_error", "avg_iterations", "recovery_rate"],
        rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.avg_weight_error.to_string(),
                r.avg_square_error.to_string(),
                r.avg_iterations.to_string(),
                r.recovery_rate.to_string(),
            ]
        }),
        &cfg,
    )?;
    let p = dir.join("table1.csv");
    write(&p, &text)?;
    Ok(p)
}
