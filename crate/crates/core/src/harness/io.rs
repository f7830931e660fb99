//! Simulated datasets on disk.
//!
//! A dataset directory holds `observations.csv` (`time, p_<row>_<col>`),
//! `truth.csv` (`time, x_<c>, zref_<c>, pairing_ref`) and `scenario.json`
//! with the generating configuration and repeat index.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::antidev::AntidevelopmentPath;
use crate::csvio::{read_table, write_table, Table};
use crate::error::{Error, Result};
use crate::geometry::{skew_dim, SkewMatrix, StiefelPoint};
use crate::simulate::{observe, ObservationStream, TruthTrajectory};

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SIDECAR_FILE: &str = "scenario.json";

/// Observations plus whatever is known about the hidden state.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub stream: ObservationStream,
    pub truth_x: Option<Vec<DVector<f64>>>,
    pub z_ref: Option<Vec<DVector<f64>>>,
    pub pairing_ref: Option<Vec<f64>>,
}

impl Dataset {
    pub fn from_truth(truth: &TruthTrajectory, k: usize, delta_t: f64) -> Result<Self> {
        let stream = observe(truth, k, delta_t)?;
        let stride = truth.sample_stride(delta_t)?;
        let pick = |j: usize| j * stride;
        let m = stream.len();
        Ok(Dataset {
            truth_x: Some((0..m).map(|j| truth.x[pick(j)].coords()).collect()),
            z_ref: Some((0..m).map(|j| truth.z_ref[pick(j)].clone()).collect()),
            pairing_ref: Some((0..m).map(|j| truth.pairing_ref[pick(j)]).collect()),
            stream,
        })
    }

    /// Reference anti-development from the fine-grid increments.
    pub fn reference_path(&self) -> Result<AntidevelopmentPath> {
        let z = self
            .z_ref
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset has no reference anti-development".into()))?;
        let n = self.stream.n;
        let increments = z
            .windows(2)
            .map(|w| SkewMatrix::from_coords(n, (&w[1] - &w[0]).as_slice()))
            .collect::<Result<Vec<_>>>()?;
        AntidevelopmentPath::from_increments(n, self.stream.times.clone(), increments)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ScenarioConfig,
    pub repeat: u64,
}

pub fn write_dataset(dir: &Path, sidecar: &Sidecar, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let s = &data.stream;
    let mut header = vec!["time".to_string()];
    for r in 0..s.n {
        for c in 0..s.k {
            header.push(format!("p_{r}_{c}"));
        }
    }
    let rows: Vec<Vec<f64>> = s
        .times
        .iter()
        .zip(&s.points)
        .map(|(&t, p)| {
            let m = p.matrix();
            let mut row = vec![t];
            for r in 0..s.n {
                for c in 0..s.k {
                    row.push(m[(r, c)]);
                }
            }
            row
        })
        .collect();
    write_table(&dir.join(OBSERVATIONS_FILE), &header, &rows)?;

    if let (Some(x), Some(z), Some(pr)) = (&data.truth_x, &data.z_ref, &data.pairing_ref) {
        let d = skew_dim(s.n);
        let mut header = vec!["time".to_string()];
        header.extend((0..d).map(|c| format!("x_{c}")));
        header.extend((0..d).map(|c| format!("zref_{c}")));
        header.push("pairing_ref".into());
        let rows: Vec<Vec<f64>> = (0..s.len())
            .map(|j| {
                let mut row = vec![s.times[j]];
                row.extend(x[j].iter());
                row.extend(z[j].iter());
                row.push(pr[j]);
                row
            })
            .collect();
        write_table(&dir.join(TRUTH_FILE), &header, &rows)?;
    }
    std::fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok(())
}

fn vectors(table: &Table, prefix: &str, expected: usize) -> Result<Vec<DVector<f64>>> {
    let cols = table.columns_with_prefix(prefix);
    if cols.len() != expected {
        return Err(Error::Parse(format!(
            "expected {expected} `{prefix}` columns, found {}",
            cols.len()
        )));
    }
    Ok(table
        .rows
        .iter()
        .map(|r| DVector::from_iterator(expected, cols.iter().map(|&c| r[c])))
        .collect())
}

pub fn read_dataset(dir: &Path) -> Result<(Sidecar, Dataset)> {
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
    let (n, k) = (sidecar.config.n, sidecar.config.k);
    let obs = read_table(&dir.join(OBSERVATIONS_FILE))?;
    let tcol = obs.column("time")?;
    let pcols = obs.columns_with_prefix("p_");
    if pcols.len() != n * k {
        return Err(Error::DimensionMismatch(format!(
            "observations have {} frame entries, n*k = {}",
            pcols.len(),
            n * k
        )));
    }
    let times: Vec<f64> = obs.rows.iter().map(|r| r[tcol]).collect();
    let points = obs
        .rows
        .iter()
        .map(|r| StiefelPoint::new(DMatrix::from_fn(n, k, |i, j| r[pcols[i * k + j]])))
        .collect::<Result<Vec<_>>>()?;
    if times.len() < 2 {
        return Err(Error::Parse("need at least two observation samples".into()));
    }
    let stream = ObservationStream {
        n,
        k,
        delta_t: times[1] - times[0],
        times,
        points,
    };
    let mut data = Dataset {
        stream,
        truth_x: None,
        z_ref: None,
        pairing_ref: None,
    };
    let truth_path = dir.join(TRUTH_FILE);
    if truth_path.exists() {
        let t = read_table(&truth_path)?;
        if t.rows.len() != data.stream.len() {
            return Err(Error::Parse("truth and observations have different lengths".into()));
        }
        let d = skew_dim(n);
        data.truth_x = Some(vectors(&t, "x_", d)?);
        data.z_ref = Some(vectors(&t, "zref_", d)?);
        let pc = t.column("pairing_ref")?;
        data.pairing_ref = Some(t.rows.iter().map(|r| r[pc]).collect());
    }
    Ok((sidecar, data))
}
