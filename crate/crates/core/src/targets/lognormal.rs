//! Conjugate log-normal mean model and its Gaussian synthetic-likelihood
//! approximation, evaluated on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, KmcError, Result};
use crate::targets::abc::log_sum_exp;

/// Largest probability mass allowed in either end cell of the grid.
pub const GRID_EDGE_MASS: f64 = 1e-6;

/// Posterior `(mean, precision)` of `μ` under `μ ~ N(μ₀, 1/τ₀)` and
/// `log yᵢ ~ N(μ, 1/τ)`.
pub fn lognormal_true_posterior(data: &[f64], mu0: f64, tau0: f64, tau: f64) -> Result<(f64, f64)> {
    check_positive("tau0", tau0)?;
    check_positive("tau", tau)?;
    let mut log_sum = 0.0;
    for (i, &y) in data.iter().enumerate() {
        if !(y > 0.0 && y.is_finite()) {
            return Err(KmcError::invalid(format!("data point {i} must be positive, got {y}")));
        }
        log_sum += y.ln();
    }
    let precision = tau0 + data.len() as f64 * tau;
    Ok(((tau0 * mu0 + tau * log_sum) / precision, precision))
}

/// A normalized density tabulated on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: Vec<f64>,
    /// Probability mass of each grid cell; sums to 1.
    pub mass: Vec<f64>,
    /// Mass divided by cell width.
    pub density: Vec<f64>,
}

impl GridDensity {
    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.mass).map(|(g, m)| g * m).sum()
    }

    fn from_log_values(grid: &[f64], log_values: &[f64]) -> Result<Self> {
        let n = grid.len();
        let widths: Vec<f64> = (0..n)
            .map(|i| {
                let lo = if i == 0 { grid[0] } else { 0.5 * (grid[i - 1] + grid[i]) };
                let hi = if i + 1 == n { grid[n - 1] } else { 0.5 * (grid[i] + grid[i + 1]) };
                hi - lo
            })
            .collect();
        let log_mass: Vec<f64> = log_values.iter().zip(&widths).map(|(l, w)| l + w.ln()).collect();
        let z = log_sum_exp(&log_mass);
        if !z.is_finite() {
            return Err(KmcError::numeric("grid density has no finite mass"));
        }
        let mass: Vec<f64> = log_mass.iter().map(|l| (l - z).exp()).collect();
        if mass[0] > GRID_EDGE_MASS || mass[n - 1] > GRID_EDGE_MASS {
            return Err(KmcError::invalid(format!(
                "grid truncates the posterior (end-cell masses {:.3e}, {:.3e}); widen the grid",
                mass[0],
                mass[n - 1]
            )));
        }
        let density = mass.iter().zip(&widths).map(|(m, w)| m / w).collect();
        Ok(GridDensity { grid: grid.to_vec(), mass, density })
    }
}

/// Moment map of one log-normal observation: `(mean, variance)`.
pub fn lognormal_moments(mu: f64, tau: f64) -> (f64, f64) {
    let mean = (mu + 0.5 / tau).exp();
    let var = ((1.0 / tau).exp() - 1.0) * (2.0 * mu + 1.0 / tau).exp();
    (mean, var)
}

/// Posterior of `μ` when each observation is modeled as
/// `N(mean(μ), variance(μ) + ε²)` using the exact log-normal moment maps.
pub fn synthetic_gaussian_posterior(
    data: &[f64],
    mu_grid: &[f64],
    mu0: f64,
    tau0: f64,
    tau: f64,
    epsilon: f64,
) -> Result<GridDensity> {
    check_positive("tau0", tau0)?;
    check_positive("tau", tau)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(KmcError::invalid(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if mu_grid.len() < 3 || mu_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KmcError::invalid("grid needs at least three strictly increasing points"));
    }
    let log_values: Vec<f64> = mu_grid
        .iter()
        .map(|&mu| {
            let (m, v) = lognormal_moments(mu, tau);
            let s2 = v + epsilon * epsilon;
            let lik: f64 = data.iter().map(|y| -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (y - m).powi(2) / s2)).sum();
            lik - 0.5 * tau0 * (mu - mu0).powi(2)
        })
        .collect();
    GridDensity::from_log_values(mu_grid, &log_values)
}

/// Conjugate posterior tabulated on the same kind of grid.
pub fn true_posterior_on_grid(data: &[f64], mu_grid: &[f64], mu0: f64, tau0: f64, tau: f64) -> Result<GridDensity> {
    let (mean, prec) = lognormal_true_posterior(data, mu0, tau0, tau)?;
    let log_values: Vec<f64> = mu_grid.iter().map(|mu| -0.5 * prec * (mu - mean).powi(2)).collect();
    GridDensity::from_log_values(mu_grid, &log_values)
}

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}
