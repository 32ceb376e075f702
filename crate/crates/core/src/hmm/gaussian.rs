use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Joint Gaussian over `z = [x, y]`: body features first (`dx` channels),
/// sensor features after.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub dx: usize,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, dx: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Model(format!(
                "covariance is {}x{}, mean has {d} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if dx > d {
            return Err(Error::Model(format!("dx = {dx} exceeds dimension {d}")));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(Error::Model("covariance is not symmetric".into()));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite Gaussian parameters".into()));
        }
        Ok(Self { mean, cov, dx })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn dy(&self) -> usize {
        self.dim() - self.dx
    }

    pub fn mu_x(&self) -> DVector<f64> {
        self.mean.rows(0, self.dx).into_owned()
    }

    pub fn mu_y(&self) -> DVector<f64> {
        self.mean.rows(self.dx, self.dy()).into_owned()
    }

    pub fn u_xx(&self) -> DMatrix<f64> {
        self.cov.view((0, 0), (self.dx, self.dx)).into_owned()
    }

    pub fn u_xy(&self) -> DMatrix<f64> {
        self.cov.view((0, self.dx), (self.dx, self.dy())).into_owned()
    }

    pub fn u_yx(&self) -> DMatrix<f64> {
        self.cov.view((self.dx, 0), (self.dy(), self.dx)).into_owned()
    }

    pub fn u_yy(&self) -> DMatrix<f64> {
        self.cov
            .view((self.dx, self.dx), (self.dy(), self.dy()))
            .into_owned()
    }

    /// Log density of the full joint vector.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let chol = Cholesky::new(self.cov.clone()).ok_or_else(|| Error::Singular {
            state: 0,
            msg: "covariance is not positive definite".into(),
        })?;
        Ok(log_density_chol(&chol, &self.mean, z))
    }
}

/// Log density of `z` under N(mean, L Lᵀ).
pub(crate) fn log_density_chol(chol: &Cholesky<f64, nalgebra::Dyn>, mean: &DVector<f64>, z: &[f64]) -> f64 {
    let d = mean.len();
    let diff = DVector::from_iterator(d, z.iter().zip(mean.iter()).map(|(a, b)| a - b));
    let l = chol.l_dirty();
    let w = l
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a nonzero diagonal");
    let log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (w.norm_squared() + log_det + d as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Precomputed regression of `x` on `y` for one Gaussian state:
/// `E[x | y] = mu_x + A (y - mu_y)` with `A = U_xy U_yy⁻¹`, and the
/// conditional covariance `U_xx - U_xy U_yy⁻¹ U_yx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub gain: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

/// Smallest eigenvalue of `U_yy` accepted by [`Conditioner::new`].
pub const DEFAULT_COND_FLOOR: f64 = 1e-6;

impl Conditioner {
    /// Factorizes `U_yy` (Cholesky, no explicit inverse). Fails when its
    /// smallest eigenvalue falls below `floor`.
    pub fn new(state: &GaussianState, floor: f64) -> Result<Self> {
        let u_yy = state.u_yy();
        let u_yx = state.u_yx();
        if state.dy() == 0 {
            return Err(Error::Conditioning("state has no sensor channels".into()));
        }
        let min_eig = SymmetricEigen::new(u_yy.clone()).eigenvalues.min();
        // the floor is added to the diagonal during fitting; allow rounding
        if !(min_eig >= floor * (1.0 - 1e-6)) {
            return Err(Error::Conditioning(format!(
                "sensor covariance eigenvalue {min_eig:e} below floor {floor:e}"
            )));
        }
        let chol = Cholesky::new(u_yy)
            .ok_or_else(|| Error::Conditioning("sensor covariance not positive definite".into()))?;
        // U_yy⁻¹ U_yx, then A = (U_yy⁻¹ U_yx)ᵀ since U_yy is symmetric
        let solved = chol.solve(&u_yx);
        let gain = solved.transpose();
        let mut cov = state.u_xx() - state.u_xy() * &solved;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self {
            mu_x: state.mu_x(),
            mu_y: state.mu_y(),
            gain,
            cov,
        })
    }

    /// Conditional mean for sensor vector `y`.
    pub fn mean(&self, y: &[f64]) -> DVector<f64> {
        self.mean_around(self.mu_x.as_slice(), self.mu_y.as_slice(), y)
    }

    /// Conditional mean using this state's gain around another anchor
    /// `(mu_x, mu_y)`.
    pub fn mean_around(&self, mu_x: &[f64], mu_y: &[f64], y: &[f64]) -> DVector<f64> {
        let dy = DVector::from_iterator(y.len(), y.iter().zip(mu_y).map(|(a, b)| a - b));
        DVector::from_column_slice(mu_x) + &self.gain * dy
    }
}

/// Conditional mean and covariance of `x` given sensor features `y`.
pub fn condition_on_sensor(state: &GaussianState, y: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if y.len() != state.dy() {
        return Err(Error::Conditioning(format!(
            "sensor vector has {} channels, state expects {}",
            y.len(),
            state.dy()
        )));
    }
    let c = Conditioner::new(state, DEFAULT_COND_FLOOR)?;
    Ok((c.mean(y), c.cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, dx: usize, dy: usize) -> GaussianState {
        let d = dx + dy;
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        GaussianState::new(mean, cov, dx).unwrap()
    }

    #[test]
    fn independent_blocks_return_marginal() {
        let mut cov = DMatrix::identity(5, 5) * 2.0;
        cov[(0, 1)] = 0.5;
        cov[(1, 0)] = 0.5;
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = GaussianState::new(mean, cov, 3).unwrap();
        let (m, c) = condition_on_sensor(&s, &[10.0, -3.0]).unwrap();
        assert_eq!(m, s.mu_x());
        assert_eq!(c, s.u_xx());
    }

    #[test]
    fn centered_input_returns_prior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng, 5, 3);
        let (m, _) = condition_on_sensor(&s, s.mu_y().as_slice()).unwrap();
        assert!((m - s.mu_x()).amax() < 1e-12);
    }

    #[test]
    fn matches_partitioned_inverse() {
        // E[x|y] and Cov[x|y] from the precision matrix P = U⁻¹:
        // Cov = P_xx⁻¹, mean = mu_x - P_xx⁻¹ P_xy (y - mu_y)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = random_state(&mut rng, 5, 3);
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = s.cov.clone().try_inverse().unwrap();
            let pxx = p.view((0, 0), (5, 5)).into_owned();
            let pxy = p.view((0, 5), (5, 3)).into_owned();
            let cov = pxx.try_inverse().unwrap();
            let dy = DVector::from_vec(y.clone()) - s.mu_y();
            let mean = s.mu_x() - &cov * pxy * dy;
            let (m, c) = condition_on_sensor(&s, &y).unwrap();
            assert!((m - mean).amax() < 1e-9);
            assert!((c - cov).amax() < 1e-9);
        }
    }

    #[test]
    fn singular_sensor_block_is_rejected() {
        let mut cov = DMatrix::identity(4, 4);
        cov[(3, 3)] = 0.0;
        let s = GaussianState::new(DVector::zeros(4), cov, 2).unwrap();
        assert!(matches!(
            condition_on_sensor(&s, &[0.0, 0.0]),
            Err(Error::Conditioning(_))
        ));
        assert!(condition_on_sensor(&s, &[0.0]).is_err());
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        let mut cov = DMatrix::identity(3, 3);
        cov[(0, 1)] = 0.3;
        assert!(GaussianState::new(DVector::zeros(3), cov, 1).is_err());
    }

    #[test]
    fn log_density_of_standard_normal() {
        let s = GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2), 1).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 2.0;
        assert!((s.log_density(&[1.0, 1.0]).unwrap() - expected).abs() < 1e-12);
    }
}
