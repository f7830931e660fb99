use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Estimator, ScenarioConfig};
use super::io::Dataset;
use crate::antidev::antidevelopment;
use crate::csvio::{read_table, write_table};
use crate::error::{Error, Result};
use crate::filters::{run_kalman, run_particle_filter};
use crate::geometry::Rotation;
use crate::rng::SeedTree;
use crate::simulate::{simulate_truth, SimulationGrid, StateModel};

pub const REPORT_FILE: &str = "report.json";
pub const MEAN_FILE: &str = "mean_sq_error.csv";

/// Offset of estimator seed trees inside a repeat's tree.
const ESTIMATOR_SEED_BASE: u64 = 100;

/// Estimates of one estimator on one repeat, as written to its CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub repeat: usize,
    pub label: String,
    pub times: Vec<f64>,
    pub truth: Option<Vec<DVector<f64>>>,
    pub estimates: Vec<DVector<f64>>,
    /// Posterior standard deviation of each coordinate.
    pub sd: Vec<DVector<f64>>,
    pub ess: Option<Vec<f64>>,
    pub resampled: Option<Vec<bool>>,
}

/// `|estimate - truth|^2` summed over so(n) coordinates, per sample.
pub fn squared_errors(truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> Vec<f64> {
    truth
        .iter()
        .zip(estimates)
        .map(|(x, e)| (e - x).norm_squared())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `sum_{j >= 1} |e_j|^2 delta_t`.
    pub cumulated_error: f64,
    /// Mean of `|e_j|^2` over samples `j >= 1`.
    pub time_avg_mse: f64,
    pub final_sq_error: f64,
}

impl RunMetrics {
    pub fn from_errors(sq: &[f64], delta_t: f64) -> Self {
        let tail = &sq[1.min(sq.len())..];
        let total: f64 = tail.iter().sum();
        RunMetrics {
            cumulated_error: total * delta_t,
            time_avg_mse: if tail.is_empty() { 0.0 } else { total / tail.len() as f64 },
            final_sq_error: sq.last().copied().unwrap_or(0.0),
        }
    }
}

impl RunRecord {
    pub fn metrics(&self, delta_t: f64) -> Option<RunMetrics> {
        self.truth
            .as_ref()
            .map(|x| RunMetrics::from_errors(&squared_errors(x, &self.estimates), delta_t))
    }

    pub fn file_name(&self) -> String {
        format!("r{:03}_{}.csv", self.repeat, self.label)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.estimates.first().map_or(0, |e| e.len());
        let mut header = vec!["time".to_string()];
        if self.truth.is_some() {
            header.extend((0..d).map(|c| format!("x_{c}")));
        }
        header.extend((0..d).map(|c| format!("est_{c}")));
        if self.truth.is_some() {
            header.extend((0..d).map(|c| format!("sqerr_{c}")));
        }
        header.extend((0..d).map(|c| format!("sd_{c}")));
        if self.ess.is_some() {
            header.push("ess".into());
            header.push("resampled".into());
        }
        let rows: Vec<Vec<f64>> = (0..self.times.len())
            .map(|j| {
                let est = &self.estimates[j];
                let mut row = vec![self.times[j]];
                if let Some(x) = &self.truth {
                    row.extend(x[j].iter());
                }
                row.extend(est.iter());
                if let Some(x) = &self.truth {
                    row.extend((est - &x[j]).iter().map(|e| e * e));
                }
                row.extend(self.sd[j].iter());
                if let (Some(ess), Some(rs)) = (&self.ess, &self.resampled) {
                    row.push(ess[j]);
                    row.push(if rs[j] { 1.0 } else { 0.0 });
                }
                row
            })
            .collect();
        write_table(path, &header, &rows)
    }

    pub fn read_csv(path: &Path, repeat: usize, label: &str) -> Result<Self> {
        let t = read_table(path)?;
        let vecs = |prefix: &str| -> Option<Vec<DVector<f64>>> {
            let cols = t.columns_with_prefix(prefix);
            if cols.is_empty() {
                return None;
            }
            Some(
                t.rows
                    .iter()
                    .map(|r| DVector::from_iterator(cols.len(), cols.iter().map(|&c| r[c])))
                    .collect(),
            )
        };
        let tc = t.column("time")?;
        let estimates = vecs("est_").ok_or_else(|| Error::Parse(format!("{}: no estimates", path.display())))?;
        let ess = t.column("ess").ok().map(|c| t.rows.iter().map(|r| r[c]).collect());
        let resampled = t.column("resampled").ok().map(|c| t.rows.iter().map(|r| r[c] != 0.0).collect());
        Ok(RunRecord {
            repeat,
            label: label.to_string(),
            times: t.rows.iter().map(|r| r[tc]).collect(),
            truth: vecs("x_"),
            sd: vecs("sd_").unwrap_or_default(),
            estimates,
            ess,
            resampled,
        })
    }
}

/// Simulates repeat `repeat` of a scenario.
pub fn simulate_repeat(config: &ScenarioConfig, grid: &SimulationGrid, model: &StateModel, repeat: u64) -> Result<Dataset> {
    let seeds = SeedTree::new(config.seed).child(repeat);
    let truth = simulate_truth(
        model,
        grid,
        config.sigma_w,
        config.k,
        &Rotation::identity(config.n),
        &config.initial_velocity()?,
        &seeds,
    )?;
    Dataset::from_truth(&truth, config.k, grid.delta_t)
}

/// Applies every configured estimator to one dataset.
pub fn run_estimators(config: &ScenarioConfig, model: &StateModel, data: &Dataset, repeat: u64) -> Result<Vec<RunRecord>> {
    let stream = &data.stream;
    if stream.n != config.n || stream.k != config.k {
        return Err(Error::DimensionMismatch(format!(
            "config is V({}, {}) but observations are V({}, {})",
            config.n, config.k, stream.n, stream.k
        )));
    }
    let seeds = SeedTree::new(config.seed).child(repeat);
    let mut out = Vec::with_capacity(config.estimators.len());
    for (i, est) in config.estimators.iter().enumerate() {
        let label = est.label(config.scheme);
        let record = match est.resolve(config.scheme) {
            Estimator::Particle(Some(scheme)) => {
                let run = run_particle_filter(
                    stream,
                    model,
                    &config.filter,
                    scheme,
                    config.particles,
                    &seeds.child(ESTIMATOR_SEED_BASE + i as u64),
                )?;
                RunRecord {
                    repeat: repeat as usize,
                    label,
                    times: run.times,
                    truth: data.truth_x.clone(),
                    estimates: run.estimates,
                    sd: run.spread,
                    ess: Some(run.ess),
                    resampled: Some(run.resampled),
                }
            }
            resolved => {
                let path = match resolved {
                    Estimator::Kalman(Some(scheme)) => antidevelopment(stream, scheme)?,
                    _ => data.reference_path()?,
                };
                let init = config.filter.prior.gaussian(config.n)?;
                let states = run_kalman(&path, model, config.filter.sigma_w, &init)?;
                RunRecord {
                    repeat: repeat as usize,
                    label,
                    times: path.times,
                    truth: data.truth_x.clone(),
                    estimates: states.iter().map(|s| s.mean.clone()).collect(),
                    sd: states.iter().map(|s| s.cov.diagonal().map(f64::sqrt)).collect(),
                    ess: None,
                    resampled: None,
                }
            }
        };
        out.push(record);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repeat: usize,
    pub estimator: String,
    pub csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub estimator: String,
    pub mean_cumulated_error: f64,
    pub mean_time_avg_mse: f64,
    pub mean_final_sq_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ScenarioConfig,
    /// Sampling period the metrics were integrated with.
    pub delta_t: f64,
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<AggregateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_sq_error_csv: Option<String>,
}

/// Report plus the in-memory records it summarizes.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub records: Vec<RunRecord>,
}

/// Per-time mean over repeats of the squared error, one column per label.
pub fn mean_squared_error_table(labels: &[String], records: &[RunRecord]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut times = None;
    let mut columns = Vec::with_capacity(labels.len());
    for label in labels {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| &r.label == label).collect();
        let first = runs.first()?;
        times.get_or_insert_with(|| first.times.clone());
        let mut acc = vec![0.0; first.times.len()];
        for r in &runs {
            let sq = squared_errors(r.truth.as_ref()?, &r.estimates);
            for (a, s) in acc.iter_mut().zip(sq) {
                *a += s;
            }
        }
        acc.iter_mut().for_each(|a| *a /= runs.len() as f64);
        columns.push(acc);
    }
    Some((times?, columns))
}

/// Aggregates over repeats in repeat order.
pub fn summarize(config: &ScenarioConfig, records: &[RunRecord], delta_t: f64) -> ExperimentReport {
    let runs: Vec<RunSummary> = records
        .iter()
        .map(|r| RunSummary {
            repeat: r.repeat,
            estimator: r.label.clone(),
            csv: format!("runs/{}", r.file_name()),
            metrics: r.metrics(delta_t),
        })
        .collect();
    let aggregate = config
        .labels()
        .iter()
        .filter_map(|label| {
            let ms: Vec<RunMetrics> = runs
                .iter()
                .filter(|r| &r.estimator == label)
                .map(|r| r.metrics)
                .collect::<Option<Vec<_>>>()?;
            let mean = |f: fn(&RunMetrics) -> f64| ms.iter().map(f).sum::<f64>() / ms.len() as f64;
            Some(AggregateSummary {
                estimator: label.clone(),
                mean_cumulated_error: mean(|m| m.cumulated_error),
                mean_time_avg_mse: mean(|m| m.time_avg_mse),
                mean_final_sq_error: mean(|m| m.final_sq_error),
            })
        })
        .collect::<Vec<_>>();
    let has_truth = !aggregate.is_empty();
    ExperimentReport {
        config: config.clone(),
        delta_t,
        runs,
        aggregate,
        mean_sq_error_csv: has_truth.then(|| MEAN_FILE.to_string()),
    }
}

/// Simulates every repeat in parallel and filters it with every estimator.
pub fn run_experiment(config: &ScenarioConfig) -> Result<Experiment> {
    let (grid, model) = config.validate()?;
    let per_repeat = (0..config.repeats as u64)
        .into_par_iter()
        .map(|r| {
            let data = simulate_repeat(config, &grid, &model, r)?;
            run_estimators(config, &model, &data, r)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RunRecord> = per_repeat.into_iter().flatten().collect();
    let report = summarize(config, &records, grid.delta_t);
    Ok(Experiment { report, records })
}

impl Experiment {
    pub fn aggregate(&self, label: &str) -> Option<&AggregateSummary> {
        self.report.aggregate.iter().find(|a| a.estimator == label)
    }

    pub fn records_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.label == label)
    }

    /// Writes `report.json`, `runs/*.csv` and the mean squared error table.
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out.join("runs"))?;
        for r in &self.records {
            r.write_csv(&out.join("runs").join(r.file_name()))?;
        }
        if let Some((times, cols)) = mean_squared_error_table(&self.report.config.labels(), &self.records) {
            let mut header = vec!["time".to_string()];
            header.extend(self.report.config.labels());
            let rows: Vec<Vec<f64>> = (0..times.len())
                .map(|j| std::iter::once(times[j]).chain(cols.iter().map(|c| c[j])).collect())
                .collect();
            write_table(&out.join(MEAN_FILE), &header, &rows)?;
        }
        std::fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&self.report)? + "\n")?;
        Ok(())
    }
}
