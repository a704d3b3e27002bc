//! Score matching estimators for the log-target gradient.
//!
//! Both estimators minimize the empirical score matching objective
//! `(1/n) Σ_x Σ_ℓ [∂²f/∂x_ℓ² + ½ (∂f/∂x_ℓ)²]` over a linear model class plus a
//! ridge penalty, so fitting reduces to one linear solve.

pub mod cv;
pub mod finite;
pub mod lite;

use nalgebra::DMatrix;

use crate::error::{KmcError, Result};

pub use cv::{cross_validate, CvEstimator, CvResult};
pub use finite::{finite_grad, finite_update, fit_finite_batch, FiniteModel, UpdateReport};
pub use lite::{fit_lite, fit_lite_lowrank, lite_grad, lite_log_density, LiteModel, LiteSystem, LowRankOptions};

/// An unnormalized log-density surrogate `f` with analytic derivatives.
///
/// The unchecked methods assume `x.len() == dim()`.
pub trait GradientModel: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    fn grad_into(&self, x: &[f64], out: &mut [f64]);

    /// `∂²f/∂x_ℓ²` for zero-based coordinate `ℓ`.
    fn second_derivative(&self, x: &[f64], coord: usize) -> f64;

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.grad_into(x, &mut out);
        out
    }
}

/// The surrogate `f ≡ 0` used before any model has been fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroModel {
    pub dim: usize,
}

impl GradientModel for ZeroModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn grad_into(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn second_derivative(&self, _x: &[f64], _coord: usize) -> f64 {
        0.0
    }
}

/// Empirical score matching objective of `f` on the rows of `data`.
///
/// `grad_f(x)` returns `∇f(x)` and `second(x, ℓ)` returns `∂²f/∂x_ℓ²`.
pub fn score_objective<G, H>(grad_f: G, second: H, data: &DMatrix<f64>) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
    H: Fn(&[f64], usize) -> f64,
{
    let terms = pointwise_objective(grad_f, second, data)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Per-point terms `Σ_ℓ [∂²f/∂x_ℓ² + ½ (∂f/∂x_ℓ)²]` of the objective.
pub fn pointwise_objective<G, H>(grad_f: G, second: H, data: &DMatrix<f64>) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Vec<f64>,
    H: Fn(&[f64], usize) -> f64,
{
    let (n, d) = (data.nrows(), data.ncols());
    if n == 0 {
        return Err(KmcError::invalid("score objective needs at least one point"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = crate::linalg::row_vec(data, i);
        let g = grad_f(&x);
        crate::error::check_dim(d, g.len())?;
        let mut term = 0.0;
        for (l, gl) in g.iter().enumerate() {
            term += second(&x, l) + 0.5 * gl * gl;
        }
        if !term.is_finite() {
            return Err(KmcError::NonFinite { index: i, what: "score objective term".into() });
        }
        out.push(term);
    }
    Ok(out)
}

/// [`score_objective`] for a fitted model.
pub fn model_objective(model: &dyn GradientModel, data: &DMatrix<f64>) -> Result<f64> {
    crate::error::check_dim(model.dim(), data.ncols())?;
    score_objective(|x| model.grad(x), |x, l| model.second_derivative(x, l), data)
}

pub(crate) fn model_pointwise(model: &dyn GradientModel, data: &DMatrix<f64>) -> Result<Vec<f64>> {
    crate::error::check_dim(model.dim(), data.ncols())?;
    pointwise_objective(|x| model.grad(x), |x, l| model.second_derivative(x, l), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_model_has_zero_objective() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let z = ZeroModel { dim: 2 };
        assert_eq!(model_objective(&z, &data).unwrap(), 0.0);
    }

    #[test]
    fn standard_normal_log_density_closed_form() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let val = score_objective(|x| x.iter().map(|v| -v).collect(), |_, _| -1.0, &data).unwrap();
        let mean_sq = (5.0 + 1.25 + 18.0) / 3.0;
        assert_abs_diff_eq!(val, -2.0 + 0.5 * mean_sq, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_terms_report_the_point() {
        let data = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let err = score_objective(
            |x| vec![if x[0] > 0.5 { f64::NAN } else { 0.0 }],
            |_, _| 0.0,
            &data,
        )
        .unwrap_err();
        assert!(matches!(err, KmcError::NonFinite { index: 1, .. }));
        assert!(score_objective(|_| vec![0.0], |_, _| 0.0, &DMatrix::zeros(0, 1)).is_err());
    }
}
