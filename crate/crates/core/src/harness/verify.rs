//! Recomputes every aggregate under a result directory from its CSV files.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ellipse::{EllipseReport, ELLIPSE_FILE, ELLIPSE_FINAL};
use super::experiment::{mean_squared_error_table, summarize, ExperimentReport, RunRecord, REPORT_FILE};
use super::rate::{log_log_slope, mse_from_paths, RateReport, RATE_FILE, RATE_PATHS, RATE_TABLE};
use super::sweep::{sweep_table, SweepReport, SWEEP_FILE, SWEEP_TABLE};
use crate::csvio::read_table;
use crate::error::{Error, Result};

pub const VERIFY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifySummary {
    pub reports: Vec<String>,
    pub values_checked: usize,
    pub max_abs_diff: f64,
}

struct Checker {
    summary: VerifySummary,
}

impl Checker {
    fn value(&mut self, what: &str, stored: f64, recomputed: f64) -> Result<()> {
        let diff = (stored - recomputed).abs();
        self.summary.values_checked += 1;
        if diff.is_nan() {
            if stored.is_nan() && recomputed.is_nan() {
                return Ok(());
            }
            return Err(Error::Verification(format!("{what}: {stored} vs {recomputed}")));
        }
        self.summary.max_abs_diff = self.summary.max_abs_diff.max(diff);
        if diff > VERIFY_TOL * stored.abs().max(1.0) {
            return Err(Error::Verification(format!("{what}: stored {stored}, recomputed {recomputed}")));
        }
        Ok(())
    }

    fn table(&mut self, path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
        let t = read_table(path)?;
        if t.header != header || t.rows.len() != rows.len() {
            return Err(Error::Verification(format!("{}: shape differs", path.display())));
        }
        for (i, (a, b)) in t.rows.iter().zip(rows).enumerate() {
            for (c, (x, y)) in a.iter().zip(b).enumerate() {
                self.value(&format!("{} row {i} column {}", path.display(), header[c]), *x, *y)?;
            }
        }
        Ok(())
    }

    fn experiment(&mut self, dir: &Path) -> Result<()> {
        let report: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(dir.join(REPORT_FILE))?)?;
        let records = report
            .runs
            .iter()
            .map(|r| RunRecord::read_csv(&dir.join(&r.csv), r.repeat, &r.estimator))
            .collect::<Result<Vec<_>>>()?;
        let again = summarize(&report.config, &records, report.delta_t);
        if again.runs.len() != report.runs.len() || again.aggregate.len() != report.aggregate.len() {
            return Err(Error::Verification(format!("{}: run list differs", dir.display())));
        }
        for (a, b) in report.runs.iter().zip(&again.runs) {
            match (&a.metrics, &b.metrics) {
                (Some(x), Some(y)) => {
                    let what = format!("{} {}", a.csv, "metrics");
                    self.value(&what, x.cumulated_error, y.cumulated_error)?;
                    self.value(&what, x.time_avg_mse, y.time_avg_mse)?;
                    self.value(&what, x.final_sq_error, y.final_sq_error)?;
                }
                (None, None) => {}
                _ => return Err(Error::Verification(format!("{}: metrics presence differs", a.csv))),
            }
        }
        for (a, b) in report.aggregate.iter().zip(&again.aggregate) {
            let what = format!("aggregate {}", a.estimator);
            self.value(&what, a.mean_cumulated_error, b.mean_cumulated_error)?;
            self.value(&what, a.mean_time_avg_mse, b.mean_time_avg_mse)?;
            self.value(&what, a.mean_final_sq_error, b.mean_final_sq_error)?;
        }
        if let Some(file) = &report.mean_sq_error_csv {
            let labels = report.config.labels();
            let (times, cols) = mean_squared_error_table(&labels, &records)
                .ok_or_else(|| Error::Verification("mean table needs truth".into()))?;
            let mut header = vec!["time".to_string()];
            header.extend(labels);
            let rows: Vec<Vec<f64>> = (0..times.len())
                .map(|j| std::iter::once(times[j]).chain(cols.iter().map(|c| c[j])).collect())
                .collect();
            self.table(&dir.join(file), &header, &rows)?;
        }
        Ok(())
    }

    fn sweep(&mut self, dir: &Path) -> Result<()> {
        let report: SweepReport = serde_json::from_str(&std::fs::read_to_string(dir.join(SWEEP_FILE))?)?;
        for (i, sub) in report.experiments.iter().enumerate() {
            let exp: ExperimentReport =
                serde_json::from_str(&std::fs::read_to_string(dir.join(sub).join(REPORT_FILE))?)?;
            for (e, label) in report.estimators.iter().enumerate() {
                let agg = exp
                    .aggregate
                    .iter()
                    .find(|a| &a.estimator == label)
                    .ok_or_else(|| Error::Verification(format!("{sub}: no aggregate for {label}")))?;
                self.value(&format!("sweep {sub} {label}"), report.mean_cumulated_error[i][e], agg.mean_cumulated_error)?;
                self.value(&format!("sweep {sub} {label}"), report.mean_time_avg_mse[i][e], agg.mean_time_avg_mse)?;
            }
        }
        let (header, rows) = sweep_table(&report);
        self.table(&dir.join(SWEEP_TABLE), &header, &rows)
    }

    fn rate(&mut self, dir: &Path) -> Result<()> {
        let report: RateReport = serde_json::from_str(&std::fs::read_to_string(dir.join(RATE_FILE))?)?;
        let paths = read_table(&dir.join(RATE_PATHS))?;
        let sq: Vec<Vec<f64>> = paths.rows.iter().map(|r| r[1..].to_vec()).collect();
        let periods = report.config.delta_ts.len();
        let (mse, se) = mse_from_paths(&sq, periods);
        for i in 0..periods {
            self.value("rate mse", report.mse[i], mse[i])?;
            self.value("rate std error", report.std_error[i], se[i])?;
        }
        self.value("rate slope", report.slope, log_log_slope(&report.config.delta_ts, &mse))?;
        let rows: Vec<Vec<f64>> = (0..periods)
            .map(|i| vec![report.config.delta_ts[i], mse[i], se[i]])
            .collect();
        self.table(
            &dir.join(RATE_TABLE),
            &["delta_t".into(), "mse".into(), "std_error".into()],
            &rows,
        )
    }

    fn ellipse(&mut self, dir: &Path) -> Result<()> {
        let report: EllipseReport = serde_json::from_str(&std::fs::read_to_string(dir.join(ELLIPSE_FILE))?)?;
        let t = read_table(&dir.join(ELLIPSE_FINAL))?;
        let mut exceeds = 0;
        for (s, row) in t.rows.iter().enumerate() {
            self.value("ellipse vertical", report.final_vertical[s], row[1])?;
            self.value("ellipse horizontal", report.final_horizontal[s], row[2])?;
            if row[1] > row[2] {
                exceeds += 1;
            }
        }
        self.value("ellipse count", report.vertical_exceeds as f64, exceeds as f64)
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    out.push(dir.to_path_buf());
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        walk(&d, out)?;
    }
    Ok(())
}

/// Checks every report found under `root`.
pub fn verify(root: &Path) -> Result<VerifySummary> {
    let mut dirs = Vec::new();
    walk(root, &mut dirs)?;
    let mut c = Checker {
        summary: VerifySummary::default(),
    };
    for d in dirs {
        let checks: [(&str, fn(&mut Checker, &Path) -> Result<()>); 4] = [
            (REPORT_FILE, Checker::experiment),
            (SWEEP_FILE, Checker::sweep),
            (RATE_FILE, Checker::rate),
            (ELLIPSE_FILE, Checker::ellipse),
        ];
        for (file, check) in checks {
            if d.join(file).exists() {
                check(&mut c, &d)?;
                c.summary.reports.push(d.join(file).display().to_string());
            }
        }
    }
    if c.summary.reports.is_empty() {
        return Err(Error::Verification(format!("no reports under {}", root.display())));
    }
    Ok(c.summary)
}
