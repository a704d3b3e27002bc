use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};

use crate::error::{check_positive, KmcError, Result};
use crate::rng::{rng_from_seed, KmcRng};
use crate::targets::{std_normal_vec, Target};

/// A multivariate normal with exact density, gradient and sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cov_factor: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(KmcError::invalid("dimension must be at least 1"));
        }
        crate::error::check_dim(d, covariance.nrows())?;
        crate::error::check_dim(d, covariance.ncols())?;
        let sym = 0.5 * (&covariance + covariance.transpose());
        let chol = sym.clone().cholesky().ok_or_else(|| KmcError::invalid("covariance is not positive definite"))?;
        let precision = chol.inverse();
        let cov_factor = chol.unpack();
        let log_det: f64 = cov_factor.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(GaussianTarget { mean, covariance: sym, cov_factor, precision, log_norm })
    }

    /// `N(0, variance·I)`.
    pub fn isotropic(d: usize, variance: f64) -> Result<Self> {
        check_positive("variance", variance)?;
        GaussianTarget::new(DVector::zeros(d), DMatrix::identity(d, d) * variance)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        let r = DVector::from_column_slice(x) - &self.mean;
        Some(self.log_norm - 0.5 * r.dot(&(&self.precision * &r)))
    }

    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = DVector::from_column_slice(x) - &self.mean;
        Some((-(&self.precision * r)).iter().copied().collect())
    }

    fn sample(&self, rng: &mut KmcRng) -> Option<Vec<f64>> {
        let z = DVector::from_vec(std_normal_vec(self.dim(), rng));
        Some((&self.mean + &self.cov_factor * z).iter().copied().collect())
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// columns of `Q` flipped so that `R` has a positive diagonal.
pub fn random_orthogonal(d: usize, rng: &mut KmcRng) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, std_normal_vec(d * d, rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Zero-mean Gaussian with covariance `QΛQᵀ`, `λᵢ ~ Gamma(1, 1)` and Haar `Q`.
pub fn make_rotated_gamma_gaussian(d: usize, seed: u64) -> Result<GaussianTarget> {
    if d == 0 {
        return Err(KmcError::invalid("dimension must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape and scale");
    let eig: Vec<f64> = (0..d).map(|_| gamma.sample(&mut rng)).collect();
    let q = random_orthogonal(d, &mut rng);
    let cov = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    GaussianTarget::new(DVector::zeros(d), cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{fd_gradient, sample_matrix};

    #[test]
    fn isotropic_density_closed_form() {
        let t = GaussianTarget::isotropic(2, 1.0).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 + 4.0);
        assert!((t.log_density(&[1.0, -2.0]).unwrap() - expected).abs() < 1e-12);
        assert_eq!(t.grad_log_density(&[1.0, -2.0]).unwrap(), vec![-1.0, 2.0]);
    }

    #[test]
    fn one_dimensional_rotated_gamma_is_plain_gaussian() {
        let t = make_rotated_gamma_gaussian(1, 9).unwrap();
        let var = t.covariance()[(0, 0)];
        let x = 0.7;
        let expected = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * x * x / var;
        assert!((t.log_density(&[x]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn rotation_is_orthogonal_with_positive_r_diagonal() {
        let mut rng = rng_from_seed(2);
        let q = random_orthogonal(6, &mut rng);
        assert!((q.transpose() * &q - DMatrix::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = make_rotated_gamma_gaussian(5, 4).unwrap();
        let x = [0.3, -0.2, 0.5, 0.1, -0.4];
        let fd = fd_gradient(|y| t.log_density(y).unwrap(), &x, 1e-5);
        let g = t.grad_log_density(&x).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn sample_covariance_matches_construction() {
        let t = make_rotated_gamma_gaussian(4, 7).unwrap();
        let n = 100_000;
        let s = sample_matrix(&t, n, &mut rng_from_seed(8)).unwrap();
        let mean = s.row_mean();
        let centered = DMatrix::from_fn(n, 4, |i, j| s[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let rel = (&cov - t.covariance()).norm() / t.covariance().norm();
        assert!(rel <= 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn rejects_bad_covariance() {
        assert!(GaussianTarget::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(GaussianTarget::isotropic(0, 1.0).is_err());
        assert!(GaussianTarget::isotropic(2, 0.0).is_err());
    }
}
