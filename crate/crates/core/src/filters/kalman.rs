use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::antidev::AntidevelopmentPath;
use crate::error::{Error, Result};
use crate::geometry::skew_dim;
use crate::simulate::StateModel;

/// Largest Euler step used for the Riccati equation; longer sampling
/// periods are split into equal substeps.
pub const RICCATI_SUBSTEP: f64 = 0.01;
const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "mean has {d} entries but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if (&cov - cov.transpose()).amax() > 1e-10 {
            return Err(Error::InvalidConfig("covariance is not symmetric".into()));
        }
        if d > 0 && SymmetricEigen::new(cov.clone()).eigenvalues.min() < -1e-10 {
            return Err(Error::InvalidConfig("covariance is not positive semidefinite".into()));
        }
        Ok(GaussianState { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn substeps(delta_t: f64) -> usize {
    if delta_t <= RICCATI_SUBSTEP {
        1
    } else {
        (delta_t / RICCATI_SUBSTEP - 1e-9).ceil() as usize
    }
}

/// Kalman-Bucy update over one sampling period with increment `dz`:
/// `mu += F mu h + V (dz - mu h) / sigma_w^2` and
/// `V += (F V + V F^T - V^2 / sigma_w^2 + sigma_b^2 I) h`, explicit Euler on
/// substeps no longer than [`RICCATI_SUBSTEP`].
pub fn kb_step(
    state: &GaussianState,
    dz: &DVector<f64>,
    model: &StateModel,
    sigma_w: f64,
    delta_t: f64,
) -> Result<GaussianState> {
    let d = skew_dim(model.n());
    if state.dim() != d || dz.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "so({}) has {d} coordinates, state has {} and dz has {}",
            model.n(),
            state.dim(),
            dz.len()
        )));
    }
    if !(delta_t > 0.0) {
        return Err(Error::InvalidConfig(format!("delta_t must be > 0, got {delta_t}")));
    }
    if !(sigma_w > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma_w must be > 0, got {sigma_w}")));
    }
    let m = substeps(delta_t);
    let h = delta_t / m as f64;
    let dz_sub = dz / m as f64;
    let f = model.drift();
    let inv_var = 1.0 / (sigma_w * sigma_w);
    let q = DMatrix::identity(d, d) * (model.sigma_b() * model.sigma_b());
    let mut mu = state.mean.clone();
    let mut v = state.cov.clone();
    for _ in 0..m {
        let innovation = &dz_sub - &mu * h;
        let mu_next = &mu + f * &mu * h + &v * innovation * inv_var;
        let fv = f * &v;
        let dv = &fv + fv.transpose() - &v * &v * inv_var + &q;
        v += dv * h;
        v = (&v + v.transpose()) * 0.5;
        mu = mu_next;
    }
    let min_eig = SymmetricEigen::new(v.clone()).eigenvalues.min();
    if min_eig < -PSD_TOL || !mu.iter().all(|x| x.is_finite()) {
        return Err(Error::NumericalInstability(format!(
            "Riccati covariance lost positive semidefiniteness (min eigenvalue {min_eig:.3e}); use a smaller delta_t"
        )));
    }
    Ok(GaussianState { mean: mu, cov: v })
}

/// Folds [`kb_step`] over the increments of `path`. Entry 0 is `init`.
pub fn run_kalman(
    path: &AntidevelopmentPath,
    model: &StateModel,
    sigma_w: f64,
    init: &GaussianState,
) -> Result<Vec<GaussianState>> {
    if path.n != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "path is in so({}) but the model in so({})",
            path.n,
            model.n()
        )));
    }
    let mut out = Vec::with_capacity(path.len());
    out.push(init.clone());
    for (j, inc) in path.increments.iter().enumerate() {
        let dt = path.times[j + 1] - path.times[j];
        let next = kb_step(out.last().unwrap(), &inc.coords(), model, sigma_w, dt)?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antidev::{antidevelopment, InterpolationScheme};
    use crate::rng::SeedTree;
    use crate::simulate::{observe, simulate_truth, SimulationGrid};
    use crate::{Rotation, SkewMatrix};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn prior(d: usize, v: f64) -> GaussianState {
        GaussianState::new(DVector::zeros(d), DMatrix::identity(d, d) * v).unwrap()
    }

    #[test]
    fn riccati_reaches_stationary_point() {
        for (sb, sw) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.5)] {
            let model = StateModel::brownian(3, sb).unwrap();
            let mut s = prior(3, 2.0);
            let dt = 0.05;
            let steps = (20.0 * sw / sb / dt) as usize;
            for _ in 0..steps {
                let dz = &s.mean * dt;
                s = kb_step(&s, &dz, &model, sw, dt).unwrap();
            }
            let target = DMatrix::identity(3, 3) * (sb * sw);
            assert_abs_diff_eq!(s.cov, target, epsilon = 1e-3 * sb * sw);
        }
    }

    #[test]
    fn zero_innovation_moves_mean_by_drift_only() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -0.5, 0.2]));
        let model = StateModel::linear(3, f, 0.3).unwrap();
        let s = GaussianState::new(DVector::from_vec(vec![1.0, 2.0, -1.0]), DMatrix::identity(3, 3)).unwrap();
        let dt = 0.004;
        let next = kb_step(&s, &(&s.mean * dt), &model, 1.0, dt).unwrap();
        let expect = DVector::from_vec(vec![1.0 - dt, 2.0 - 0.5 * 2.0 * dt, -1.0 - 0.2 * dt]);
        assert_abs_diff_eq!(next.mean, expect, epsilon = 1e-15);
    }

    #[test]
    fn substeps_cover_the_period() {
        assert_eq!(substeps(0.01), 1);
        assert_eq!(substeps(0.005), 1);
        assert_eq!(substeps(0.2), 20);
        assert_eq!(substeps(0.45), 45);
        assert_eq!(substeps(0.015), 2);
    }

    #[test]
    fn instability_is_reported() {
        // indefinite start pushed further negative by the -V^2 term
        let s = GaussianState {
            mean: DVector::zeros(3),
            cov: DMatrix::identity(3, 3) * -1.0,
        };
        let r = kb_step(&s, &DVector::zeros(3), &StateModel::constant(3), 1.0, 0.01);
        assert!(matches!(r, Err(Error::NumericalInstability(_))));
    }

    #[test]
    fn constant_truth_is_recovered() {
        let x = SkewMatrix::from_coords(3, &[0.8, -0.3, 0.5]).unwrap();
        let grid = SimulationGrid::new(1e-3, 0.01, 20.0).unwrap();
        let model = StateModel::constant(3);
        let mut inside = 0;
        for seed in 0..20 {
            let truth =
                simulate_truth(&model, &grid, 1.0, 3, &Rotation::identity(3), &x, &SeedTree::new(seed)).unwrap();
            let stream = observe(&truth, 3, 0.01).unwrap();
            let path = antidevelopment(&stream, InterpolationScheme::Geodesic).unwrap();
            let states = run_kalman(&path, &model, 1.0, &prior(3, 2.0)).unwrap();
            let last = states.last().unwrap();
            let err = &last.mean - x.coords();
            if (0..3).all(|c| err[c].abs() <= 3.0 * last.cov[(c, c)].sqrt()) {
                inside += 1;
            }
        }
        assert!(inside >= 19, "{inside}");
    }

    #[test]
    fn deterministic() {
        let grid = SimulationGrid::new(1e-3, 0.05, 2.0).unwrap();
        let model = StateModel::brownian(3, 1.0).unwrap();
        let truth = simulate_truth(
            &model,
            &grid,
            1.0,
            3,
            &Rotation::identity(3),
            &SkewMatrix::zeros(3),
            &SeedTree::new(1),
        )
        .unwrap();
        let path = AntidevelopmentPath::from_reference(&truth, 0.05).unwrap();
        let a = run_kalman(&path, &model, 1.0, &prior(3, 2.0)).unwrap();
        let b = run_kalman(&path, &model, 1.0, &prior(3, 2.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), path.len());
    }

    proptest! {
        #[test]
        fn covariance_stays_psd_and_monotone(
            sb in 0.3f64..2.0,
            sw in 0.5f64..2.0,
            v0 in 0.01f64..2.0,
        ) {
            let model = StateModel::brownian(3, sb).unwrap();
            let target = sb * sw;
            let mut s = prior(3, v0);
            let mut gap = (v0 - target).abs();
            for _ in 0..200 {
                s = kb_step(&s, &DVector::zeros(3), &model, sw, 0.05).unwrap();
                prop_assert!((&s.cov - s.cov.transpose()).amax() <= 1e-10);
                let eig = SymmetricEigen::new(s.cov.clone()).eigenvalues;
                prop_assert!(eig.min() >= -1e-10);
                let g = (s.cov[(0, 0)] - target).abs();
                prop_assert!(g <= gap + 1e-12);
                gap = g;
            }
        }
    }
}
