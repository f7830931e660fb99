//! One scenario repeated over several sampling periods. The fine-grid
//! paths depend only on the seed, so every period sees the same truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::experiment::{run_experiment, Experiment};
use crate::csvio::write_table;
use crate::error::{Error, Result};

pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_TABLE: &str = "sweep.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub delta_ts: Vec<f64>,
    pub estimators: Vec<String>,
    /// Sub-directory of each experiment, relative to the sweep directory.
    pub experiments: Vec<String>,
    /// `mean_cumulated_error[i][e]` for period `i` and estimator `e`.
    pub mean_cumulated_error: Vec<Vec<f64>>,
    pub mean_time_avg_mse: Vec<Vec<f64>>,
}

pub struct Sweep {
    pub report: SweepReport,
    pub experiments: Vec<Experiment>,
}

pub fn sweep_dir_name(delta_t: f64) -> String {
    format!("dt_{delta_t}")
}

pub fn run_sweep(base: &ScenarioConfig, delta_ts: &[f64]) -> Result<Sweep> {
    if delta_ts.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one delta_t".into()));
    }
    let labels = base.labels();
    let mut experiments = Vec::with_capacity(delta_ts.len());
    let mut cum = Vec::new();
    let mut tmse = Vec::new();
    for &dt in delta_ts {
        let mut config = base.clone();
        config.grid.delta_t = dt;
        let exp = run_experiment(&config)?;
        let row = |f: fn(&super::experiment::AggregateSummary) -> f64| -> Result<Vec<f64>> {
            labels
                .iter()
                .map(|l| {
                    exp.aggregate(l)
                        .map(f)
                        .ok_or_else(|| Error::InvalidConfig("sweep needs simulated truth".into()))
                })
                .collect()
        };
        cum.push(row(|a| a.mean_cumulated_error)?);
        tmse.push(row(|a| a.mean_time_avg_mse)?);
        experiments.push(exp);
    }
    Ok(Sweep {
        report: SweepReport {
            delta_ts: delta_ts.to_vec(),
            estimators: labels,
            experiments: delta_ts.iter().map(|&d| sweep_dir_name(d)).collect(),
            mean_cumulated_error: cum,
            mean_time_avg_mse: tmse,
        },
        experiments,
    })
}

pub fn sweep_table(report: &SweepReport) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut header = vec!["delta_t".to_string()];
    header.extend(report.estimators.iter().map(|l| format!("{l}_cumulated_error")));
    header.extend(report.estimators.iter().map(|l| format!("{l}_time_avg_mse")));
    let rows = report
        .delta_ts
        .iter()
        .enumerate()
        .map(|(i, &dt)| {
            let mut row = vec![dt];
            row.extend(&report.mean_cumulated_error[i]);
            row.extend(&report.mean_time_avg_mse[i]);
            row
        })
        .collect();
    (header, rows)
}

impl Sweep {
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        for (exp, dir) in self.experiments.iter().zip(&self.report.experiments) {
            exp.write(&out.join(dir))?;
        }
        let (header, rows) = sweep_table(&self.report);
        write_table(&out.join(SWEEP_TABLE), &header, &rows)?;
        std::fs::write(out.join(SWEEP_FILE), serde_json::to_string_pretty(&self.report)? + "\n")?;
        Ok(())
    }
}
