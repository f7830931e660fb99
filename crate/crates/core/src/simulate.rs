//! Ground-truth generation: the hidden angular velocity `x_t`, the rotation
//! `S_t`, the fine-grid reference anti-development, and sampled observations.
//!
//! The angular velocity solves `dx = F x dt + db` in so(n) coordinates. The
//! rotation is advanced by the exponential map,
//! `S_{j+1} = exp(x_j h + dW_j) S_j`, which keeps every iterate on SO(n).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exp_so, horizontal_part, inner_so, project, skew_dim, Rotation, SkewMatrix, StiefelPoint};
use crate::rng::{stream, SeedTree};

/// Piecewise-constant angular velocity: `values[i]` holds from `times[i]` on.
#[derive(Clone, Debug, PartialEq)]
pub struct StairSchedule {
    times: Vec<f64>,
    values: Vec<SkewMatrix>,
}

impl StairSchedule {
    pub fn new(steps: Vec<(f64, SkewMatrix)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidConfig("stair schedule is empty".into()));
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(
                "stair schedule times must be strictly increasing".into(),
            ));
        }
        let n = steps[0].1.dim();
        if steps.iter().any(|(_, v)| v.dim() != n) {
            return Err(Error::DimensionMismatch("stair values differ in dimension".into()));
        }
        let (times, values) = steps.into_iter().unzip();
        Ok(StairSchedule { times, values })
    }

    /// Value in force at time `t`, or `None` before the first step.
    pub fn value_at(&self, t: f64) -> Option<&SkewMatrix> {
        let idx = self.times.partition_point(|&s| s <= t + TIME_EPS);
        idx.checked_sub(1).map(|i| &self.values[i])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[SkewMatrix] {
        &self.values
    }
}

/// Slack used when comparing grid times.
pub(crate) const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Constant,
    Brownian,
    Stair(StairSchedule),
}

/// Linear model `dx = F x dt + db` on so(n) coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct StateModel {
    n: usize,
    drift: DMatrix<f64>,
    sigma_b: f64,
    kind: ModelKind,
}

impl StateModel {
    pub fn constant(n: usize) -> Self {
        let d = skew_dim(n);
        StateModel {
            n,
            drift: DMatrix::zeros(d, d),
            sigma_b: 0.0,
            kind: ModelKind::Constant,
        }
    }

    pub fn brownian(n: usize, sigma_b: f64) -> Result<Self> {
        let d = skew_dim(n);
        Self::linear(n, DMatrix::zeros(d, d), sigma_b)
    }

    /// Ornstein-Uhlenbeck type model with drift matrix `F` (units 1/s).
    pub fn linear(n: usize, drift: DMatrix<f64>, sigma_b: f64) -> Result<Self> {
        let d = skew_dim(n);
        if drift.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "drift must be {d}x{d}, got {}x{}",
                drift.nrows(),
                drift.ncols()
            )));
        }
        if !(sigma_b >= 0.0 && sigma_b.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_b must be >= 0, got {sigma_b}")));
        }
        Ok(StateModel {
            n,
            drift,
            sigma_b,
            kind: ModelKind::Brownian,
        })
    }

    pub fn stair(n: usize, schedule: StairSchedule) -> Result<Self> {
        if schedule.values[0].dim() != n {
            return Err(Error::DimensionMismatch("stair values are not in so(n)".into()));
        }
        let d = skew_dim(n);
        Ok(StateModel {
            n,
            drift: DMatrix::zeros(d, d),
            sigma_b: 0.0,
            kind: ModelKind::Stair(schedule),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn sigma_b(&self) -> f64 {
        self.sigma_b
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// Change times of a stair model; empty otherwise.
    pub fn change_times(&self) -> &[f64] {
        match &self.kind {
            ModelKind::Stair(s) => s.times(),
            _ => &[],
        }
    }

    /// Exact transition kernel over `dt`.
    ///
    /// Stair models are deterministic tables for the truth; as a transition
    /// kernel (what particles use) they are constant between change times.
    pub fn transition(&self, dt: f64) -> Result<Transition> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {dt}")));
        }
        let d = skew_dim(self.n);
        let drift_free = self.drift.iter().all(|&v| v == 0.0);
        let phi = if drift_free { None } else { Some((&self.drift * dt).exp()) };
        let chol = if self.sigma_b == 0.0 {
            None
        } else if drift_free {
            Some(DMatrix::identity(d, d) * (self.sigma_b * dt.sqrt()))
        } else {
            let cov = van_loan_covariance(&self.drift, self.sigma_b, dt);
            let chol = cov.clone().cholesky().ok_or_else(|| {
                Error::NumericalInstability("process-noise covariance is not positive definite".into())
            })?;
            Some(chol.l())
        };
        Ok(Transition { n: self.n, phi, chol })
    }
}

/// `Q(dt) = int_0^dt exp(F s) sigma_b^2 exp(F^T s) ds` from the exponential of
/// `[[-F, sigma_b^2 I], [0, F^T]] dt`.
fn van_loan_covariance(f: &DMatrix<f64>, sigma_b: f64, dt: f64) -> DMatrix<f64> {
    let d = f.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(-f * dt));
    m.view_mut((0, d), (d, d))
        .copy_from(&(DMatrix::identity(d, d) * (sigma_b * sigma_b * dt)));
    m.view_mut((d, d), (d, d)).copy_from(&(f.transpose() * dt));
    let e = m.exp();
    let phi = e.view((d, d), (d, d)).transpose();
    let q = &phi * e.view((0, d), (d, d));
    (&q + q.transpose()) * 0.5
}

/// Precomputed `xi <- Phi xi + L eta` with `L L^T = Q(dt)`.
#[derive(Clone, Debug)]
pub struct Transition {
    n: usize,
    phi: Option<DMatrix<f64>>,
    chol: Option<DMatrix<f64>>,
}

impl Transition {
    pub fn apply<R: Rng + ?Sized>(&self, x: &SkewMatrix, rng: &mut R) -> SkewMatrix {
        if self.phi.is_none() && self.chol.is_none() {
            return x.clone();
        }
        let mut c = x.coords();
        if let Some(phi) = &self.phi {
            c = phi * c;
        }
        if let Some(l) = &self.chol {
            let eta = DVector::from_fn(c.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            c += l * eta;
        }
        SkewMatrix::from_coords(self.n, c.as_slice()).unwrap()
    }

    pub fn is_identity(&self) -> bool {
        self.phi.is_none() && self.chol.is_none()
    }
}

/// `sum_b xi_b E_b` with `xi_b ~ normal(0, variance_rate * dt)`.
pub fn sample_brownian_increment<R: Rng + ?Sized>(
    n: usize,
    variance_rate: f64,
    dt: f64,
    rng: &mut R,
) -> SkewMatrix {
    let sd = (variance_rate * dt).sqrt();
    let c: Vec<f64> = (0..skew_dim(n))
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SkewMatrix::from_coords(n, &c).unwrap()
}

/// One draw from the transition kernel over `dt`.
pub fn propagate_state<R: Rng + ?Sized>(
    x: &SkewMatrix,
    model: &StateModel,
    dt: f64,
    rng: &mut R,
) -> Result<SkewMatrix> {
    Ok(model.transition(dt)?.apply(x, rng))
}

/// Fine integration step, sampling period and horizon, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    pub h_sim: f64,
    pub delta_t: f64,
    pub horizon: f64,
}

impl SimulationGrid {
    /// Validates the grid and snaps `delta_t` to an exact multiple of `h_sim`.
    pub fn new(h_sim: f64, delta_t: f64, horizon: f64) -> Result<Self> {
        if !(h_sim > 0.0 && delta_t > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid steps must be positive: h_sim={h_sim}, delta_t={delta_t}, T={horizon}"
            )));
        }
        if h_sim > delta_t * (1.0 + 1e-12) || delta_t > horizon * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "need h_sim <= delta_t <= T, got {h_sim}, {delta_t}, {horizon}"
            )));
        }
        let stride = multiple_of(delta_t, h_sim).ok_or_else(|| {
            Error::InvalidConfig(format!("delta_t={delta_t} is not a multiple of h_sim={h_sim}"))
        })?;
        Ok(SimulationGrid {
            h_sim,
            delta_t: stride as f64 * h_sim,
            horizon,
        })
    }

    /// Fine steps per observation interval.
    pub fn stride(&self) -> usize {
        (self.delta_t / self.h_sim).round() as usize
    }

    /// Number of observation samples, including `t = 0`.
    pub fn samples(&self) -> usize {
        (self.horizon / self.delta_t + TIME_EPS).floor() as usize + 1
    }
}

/// `Some(m)` when `big = m * small` up to floating-point noise.
pub fn multiple_of(big: f64, small: f64) -> Option<usize> {
    let ratio = big / small;
    let m = ratio.round();
    if m >= 1.0 && (ratio - m).abs() <= 1e-6 * m.max(1.0) {
        Some(m as usize)
    } else {
        None
    }
}

/// Hidden trajectory recorded at the grid's sampling times.
///
/// `z_ref` is the cumulative anti-development built from the fine-grid
/// increments and `pairing_ref` the cumulative fine-grid sum
/// `sum_j <x_j, dz_j>`; both are stored at the sampling times only.
#[derive(Clone, Debug)]
pub struct TruthTrajectory {
    pub n: usize,
    pub k: usize,
    pub h_sim: f64,
    pub spacing: f64,
    pub times: Vec<f64>,
    pub x: Vec<SkewMatrix>,
    pub s: Vec<Rotation>,
    pub z_ref: Vec<DVector<f64>>,
    pub pairing_ref: Vec<f64>,
}

impl TruthTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Record indices for sampling period `delta_t`.
    pub(crate) fn sample_stride(&self, delta_t: f64) -> Result<usize> {
        multiple_of(delta_t, self.spacing).ok_or_else(|| {
            Error::GridMismatch(format!(
                "delta_t={delta_t} is not a multiple of the recorded spacing {}",
                self.spacing
            ))
        })
    }
}

/// Marches the model on the fine grid.
///
/// For `k = n` the reference increment is the full step `x h + dW`; for
/// `k < n` it is the horizontal part of that step at the current frame.
pub fn simulate_truth(
    model: &StateModel,
    grid: &SimulationGrid,
    sigma_w: f64,
    k: usize,
    s0: &Rotation,
    x0: &SkewMatrix,
    seeds: &SeedTree,
) -> Result<TruthTrajectory> {
    let n = model.n();
    if s0.dim() != n || x0.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "model is on so({n}) but S0 is {} and x0 is {}",
            s0.dim(),
            x0.dim()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidDimension(format!("need 1 <= k <= {n}, got {k}")));
    }
    if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_w must be >= 0, got {sigma_w}")));
    }
    let h = grid.h_sim;
    let stride = grid.stride();
    let samples = grid.samples();
    let transition = model.transition(h)?;
    let mut state_rng = seeds.stream(stream::TRUTH_STATE);
    let mut noise_rng = seeds.stream(stream::OBSERVATION_NOISE);

    let stair = match model.kind() {
        ModelKind::Stair(s) => Some(s),
        _ => None,
    };
    let x_at = |t: f64, fallback: &SkewMatrix| -> SkewMatrix {
        stair
            .and_then(|s| s.value_at(t))
            .cloned()
            .unwrap_or_else(|| fallback.clone())
    };

    let d = skew_dim(n);
    let mut x = x_at(0.0, x0);
    let mut s = s0.clone();
    let mut z = DVector::zeros(d);
    let mut pairing = 0.0;

    let mut out = TruthTrajectory {
        n,
        k,
        h_sim: h,
        spacing: grid.delta_t,
        times: Vec::with_capacity(samples),
        x: Vec::with_capacity(samples),
        s: Vec::with_capacity(samples),
        z_ref: Vec::with_capacity(samples),
        pairing_ref: Vec::with_capacity(samples),
    };
    let record = |out: &mut TruthTrajectory, j: usize, x: &SkewMatrix, s: &Rotation, z: &DVector<f64>, pairing: f64| {
        out.times.push(j as f64 * grid.delta_t);
        out.x.push(x.clone());
        out.s.push(s.clone());
        out.z_ref.push(z.clone());
        out.pairing_ref.push(pairing);
    };
    record(&mut out, 0, &x, &s, &z, pairing);

    let total = stride * (samples - 1);
    for step in 0..total {
        let noise = sample_brownian_increment(n, sigma_w * sigma_w, h, &mut noise_rng);
        let delta = &x.scale(h) + &noise;
        let increment = if k == n {
            delta.clone()
        } else {
            horizontal_part(&delta, &project(&s, k)?)?
        };
        pairing += inner_so(&x, &increment)?;
        z += increment.coords();
        s = exp_so(&delta).compose(&s);

        let t_next = (step + 1) as f64 * h;
        x = match stair {
            Some(_) => x_at(t_next, &x),
            None => transition.apply(&x, &mut state_rng),
        };
        if (step + 1) % stride == 0 {
            record(&mut out, (step + 1) / stride, &x, &s, &z, pairing);
        }
    }
    Ok(out)
}

/// Sampled Stiefel observations `P_j = first k columns of S(t_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationStream {
    pub n: usize,
    pub k: usize,
    pub delta_t: f64,
    pub times: Vec<f64>,
    pub points: Vec<StiefelPoint>,
}

impl ObservationStream {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every `factor`-th sample.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::GridMismatch("subsampling factor must be >= 1".into()));
        }
        Ok(ObservationStream {
            n: self.n,
            k: self.k,
            delta_t: self.delta_t * factor as f64,
            times: self.times.iter().step_by(factor).cloned().collect(),
            points: self.points.iter().step_by(factor).cloned().collect(),
        })
    }
}

pub fn observe(truth: &TruthTrajectory, k: usize, delta_t: f64) -> Result<ObservationStream> {
    let stride = truth.sample_stride(delta_t)?;
    let mut times = Vec::new();
    let mut points = Vec::new();
    for j in (0..truth.len()).step_by(stride) {
        times.push(truth.times[j]);
        points.push(project(&truth.s[j], k)?);
    }
    Ok(ObservationStream {
        n: truth.n,
        k,
        delta_t: stride as f64 * truth.spacing,
        times,
        points,
    })
}

/// Serializable description of a [`StateModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Constant,
    Brownian {
        sigma_b: f64,
        /// Row-major drift matrix on so(n) coordinates; zero when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drift: Option<Vec<Vec<f64>>>,
    },
    Stair {
        schedule: Vec<StairStep>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StairStep {
    pub time: f64,
    pub value: Vec<f64>,
}

impl ModelSpec {
    pub fn build(&self, n: usize) -> Result<StateModel> {
        match self {
            ModelSpec::Constant => Ok(StateModel::constant(n)),
            ModelSpec::Brownian { sigma_b, drift: None } => StateModel::brownian(n, *sigma_b),
            ModelSpec::Brownian {
                sigma_b,
                drift: Some(rows),
            } => {
                let d = skew_dim(n);
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch(format!("drift must be {d}x{d}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
                StateModel::linear(n, DMatrix::from_row_slice(d, d, &flat), *sigma_b)
            }
            ModelSpec::Stair { schedule } => {
                let steps = schedule
                    .iter()
                    .map(|s| Ok((s.time, SkewMatrix::from_coords(n, &s.value)?)))
                    .collect::<Result<Vec<_>>>()?;
                StateModel::stair(n, StairSchedule::new(steps)?)
            }
        }
    }

    pub fn from_model(model: &StateModel) -> Self {
        match model.kind() {
            ModelKind::Constant => ModelSpec::Constant,
            ModelKind::Brownian => {
                let f = model.drift();
                let drift = if f.iter().all(|&v| v == 0.0) {
                    None
                } else {
                    Some(f.row_iter().map(|r| r.iter().cloned().collect()).collect())
                };
                ModelSpec::Brownian {
                    sigma_b: model.sigma_b(),
                    drift,
                }
            }
            ModelKind::Stair(s) => ModelSpec::Stair {
                schedule: s
                    .times()
                    .iter()
                    .zip(s.values())
                    .map(|(&time, v)| StairStep {
                        time,
                        value: v.coords().iter().cloned().collect(),
                    })
                    .collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_skew;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_increment_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_brownian_increment(3, 0.0, 0.1, &mut rng), SkewMatrix::zeros(3));
    }

    #[test]
    fn increment_variance_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let dt = 0.01;
        let samples: Vec<DVector<f64>> = (0..draws)
            .map(|_| sample_brownian_increment(3, 1.0, dt, &mut rng).coords())
            .collect();
        for c in 0..3 {
            let var = samples.iter().map(|s| s[c] * s[c]).sum::<f64>() / draws as f64;
            // standard error of a variance estimate is var * sqrt(2 / draws)
            let se = dt * (2.0 / draws as f64).sqrt();
            assert!((var - dt).abs() < 3.0 * se, "coord {c}: {var}");
        }
        // disjoint intervals: consecutive draws are independent
        let cross = samples.windows(2).map(|w| w[0][0] * w[1][0]).sum::<f64>() / (draws - 1) as f64;
        assert!(cross.abs() < 3.0 * dt / (draws as f64).sqrt());
    }

    #[test]
    fn constant_model_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_skew(3, 1.0, &mut rng);
        let m = StateModel::constant(3);
        assert_eq!(propagate_state(&x, &m, 0.5, &mut rng).unwrap(), x);
    }

    #[test]
    fn brownian_variance_grows_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = StateModel::brownian(3, 1.0).unwrap();
        let tr = m.transition(0.1).unwrap();
        let paths = 20_000;
        let mut finals = vec![Vec::new(); 3];
        for _ in 0..paths {
            let mut x = SkewMatrix::zeros(3);
            for step in 0..10 {
                x = tr.apply(&x, &mut rng);
                if step == 4 || step == 9 {
                    finals[if step == 4 { 0 } else { 1 }].push(x.coords()[0]);
                }
            }
        }
        let var = |v: &Vec<f64>| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
        let se = |t: f64| t * (2.0 / paths as f64).sqrt();
        assert!((var(&finals[0]) - 0.5).abs() < 3.0 * se(0.5));
        assert!((var(&finals[1]) - 1.0).abs() < 3.0 * se(1.0));
    }

    #[test]
    fn ou_stationary_variance() {
        // F = -I: sigma_b^2 / 2 per coordinate
        let sigma_b = 0.8;
        let m = StateModel::linear(3, -DMatrix::identity(3, 3), sigma_b).unwrap();
        let dt = 5.0;
        let q = van_loan_covariance(m.drift(), sigma_b, dt);
        let exact = sigma_b * sigma_b / 2.0 * (1.0 - (-2.0 * dt).exp());
        assert_abs_diff_eq!(q, DMatrix::identity(3, 3) * exact, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tr = m.transition(dt).unwrap();
        let n = 40_000;
        let var = (0..n)
            .map(|_| tr.apply(&SkewMatrix::zeros(3), &mut rng).coords()[1].powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var - exact).abs() < 3.0 * exact * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn stair_schedule_validation_and_lookup() {
        let a = SkewMatrix::from_coords(3, &[1.0, 0.0, 0.0]).unwrap();
        let b = SkewMatrix::from_coords(3, &[0.0, 1.0, 0.0]).unwrap();
        assert!(StairSchedule::new(vec![(1.0, a.clone()), (1.0, b.clone())]).is_err());
        let s = StairSchedule::new(vec![(0.0, a.clone()), (2.0, b.clone())]).unwrap();
        assert_eq!(s.value_at(1.999), Some(&a));
        assert_eq!(s.value_at(2.0), Some(&b));
        let late = StairSchedule::new(vec![(1.0, a)]).unwrap();
        assert_eq!(late.value_at(0.5), None);
    }

    #[test]
    fn grid_validation() {
        assert!(SimulationGrid::new(1e-3, 0.0105, 1.0).is_err());
        assert!(SimulationGrid::new(0.1, 0.01, 1.0).is_err());
        assert!(SimulationGrid::new(1e-3, 2.0, 1.0).is_err());
        let g = SimulationGrid::new(1e-3, 0.01, 10.0).unwrap();
        assert_eq!(g.stride(), 10);
        assert_eq!(g.samples(), 1001);
        assert!((g.delta_t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn deterministic_flow_without_noise() {
        let x = SkewMatrix::from_coords(3, &[0.7, -0.4, 1.1]).unwrap();
        let grid = SimulationGrid::new(1e-3, 0.1, 1.0).unwrap();
        let s0 = Rotation::identity(3);
        let truth = simulate_truth(&StateModel::constant(3), &grid, 0.0, 3, &s0, &x, &SeedTree::new(1)).unwrap();
        for (t, s) in truth.times.iter().zip(&truth.s) {
            let expect = exp_so(&x.scale(*t));
            assert_abs_diff_eq!(s.matrix(), expect.matrix(), epsilon = 1e-8);
        }
    }

    #[test]
    fn rotations_stay_on_group() {
        let grid = SimulationGrid::new(1e-4, 1e-4, 10.0).unwrap();
        let m = StateModel::brownian(3, 1.0).unwrap();
        let truth = simulate_truth(
            &m,
            &grid,
            1.0,
            1,
            &Rotation::identity(3),
            &SkewMatrix::zeros(3),
            &SeedTree::new(2),
        )
        .unwrap();
        assert_eq!(truth.len(), 100_001);
        for s in &truth.s {
            assert!(s.orthogonality_error() <= 1e-9);
            assert!((s.matrix().determinant() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn reference_antidevelopment_quadratic_variation() {
        let grid = SimulationGrid::new(1e-3, 1e-3, 5.0).unwrap();
        let truth = simulate_truth(
            &StateModel::constant(3),
            &grid,
            1.0,
            3,
            &Rotation::identity(3),
            &SkewMatrix::zeros(3),
            &SeedTree::new(3),
        )
        .unwrap();
        for c in 0..3 {
            let qv: f64 = truth.z_ref.windows(2).map(|w| (w[1][c] - w[0][c]).powi(2)).sum();
            // sum of 5000 chi-square(1) * h terms: sd = sqrt(2 * 5000) * h
            assert!((qv - 5.0).abs() < 3.0 * (2.0 * 5000.0f64).sqrt() * 1e-3, "{qv}");
        }
    }

    #[test]
    fn observe_subsamples_exactly() {
        let grid = SimulationGrid::new(1e-3, 0.01, 1.0).unwrap();
        let truth = simulate_truth(
            &StateModel::brownian(3, 1.0).unwrap(),
            &grid,
            1.0,
            1,
            &Rotation::identity(3),
            &SkewMatrix::zeros(3),
            &SeedTree::new(4),
        )
        .unwrap();
        let a = observe(&truth, 1, 0.01).unwrap();
        let b = observe(&truth, 1, 0.02).unwrap();
        assert_eq!(a.len(), 101);
        assert_eq!(b, a.subsample(2).unwrap());
        for (p, s) in a.points.iter().zip(&truth.s) {
            assert_eq!(p.matrix(), &s.matrix().columns(0, 1).into_owned());
            assert!((p.matrix().norm() - 1.0).abs() < 1e-12);
        }
        let full = observe(&truth, 3, 0.05).unwrap();
        assert_eq!(full.points[3].matrix(), truth.s[15].matrix());
        assert!(matches!(observe(&truth, 1, 0.015), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn model_spec_roundtrip() {
        let spec: ModelSpec = serde_json::from_str(
            r#"{"kind":"stair","schedule":[{"time":0.0,"value":[1,0,0]},{"time":5.0,"value":[0,1,0]}]}"#,
        )
        .unwrap();
        let model = spec.build(3).unwrap();
        assert_eq!(model.change_times(), &[0.0, 5.0]);
        assert_eq!(ModelSpec::from_model(&model), spec);
        let b: ModelSpec = serde_json::from_str(r#"{"kind":"brownian","sigma_b":1.0}"#).unwrap();
        assert_eq!(b.build(3).unwrap(), StateModel::brownian(3, 1.0).unwrap());
    }
}
