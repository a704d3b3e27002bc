//! Benchmark densities and noisy-likelihood constructions.

pub mod abc;
pub mod banana;
pub mod fixtures;
pub mod gaussian;
pub mod lognormal;
pub mod spec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{KmcError, Result};
use crate::rng::KmcRng;

pub use abc::{abc_estimate_log_likelihood, skew_normal_log_density, skew_normal_simulate, AbcParams, AbcPosterior};
pub use banana::{banana_grad, banana_log_density, banana_sample, Banana, BananaParams};
pub use gaussian::{make_rotated_gamma_gaussian, GaussianTarget};
pub use lognormal::{lognormal_true_posterior, synthetic_gaussian_posterior, GridDensity};
pub use spec::TargetSpec;

/// A target density known exactly, through unbiased estimates, or both.
///
/// Capabilities a target lacks return `None`. Every target provides at least
/// one of the exact and estimated log-densities.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Exact unnormalized log-density.
    fn log_density(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Log of an unbiased estimate of the unnormalized density.
    fn estimate_log_density(&self, _x: &[f64], _rng: &mut KmcRng) -> Option<f64> {
        None
    }

    fn grad_log_density(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// A ground-truth draw.
    fn sample(&self, _rng: &mut KmcRng) -> Option<Vec<f64>> {
        None
    }

    /// Whether MCMC should use the estimate rather than the exact value.
    fn is_noisy(&self) -> bool {
        false
    }
}

/// The log-target value an MH chain stores for `x`: the estimate for noisy
/// targets, the exact value otherwise. `−∞` is allowed, NaN is not.
pub fn chain_log_target(target: &dyn Target, x: &[f64], rng: &mut KmcRng) -> Result<f64> {
    crate::error::check_dim(target.dim(), x.len())?;
    let v = if target.is_noisy() {
        target.estimate_log_density(x, rng)
    } else {
        target.log_density(x)
    };
    match v {
        Some(v) if v.is_nan() || v == f64::INFINITY => Err(KmcError::numeric(format!("log target is {v}"))),
        Some(v) => Ok(v),
        None => Err(KmcError::invalid("target provides no log-density")),
    }
}

/// Multiplicative log-normal noise on an exact target: the density estimate
/// is `π(x)·W` with `W = exp(s·z − s²/2)`, so `E[W] = 1`.
#[derive(Clone, Debug)]
pub struct NoisyTarget<T> {
    pub inner: T,
    pub log_noise_sd: f64,
}

impl<T: Target> NoisyTarget<T> {
    pub fn new(inner: T, log_noise_sd: f64) -> Result<Self> {
        if !(log_noise_sd >= 0.0 && log_noise_sd.is_finite()) {
            return Err(KmcError::invalid(format!("noise scale must be nonnegative, got {log_noise_sd}")));
        }
        if inner.log_density(&vec![0.0; inner.dim()]).is_none() {
            return Err(KmcError::invalid("noisy wrapper needs an exact log-density"));
        }
        Ok(NoisyTarget { inner, log_noise_sd })
    }
}

impl<T: Target> Target for NoisyTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        self.inner.log_density(x)
    }

    fn estimate_log_density(&self, x: &[f64], rng: &mut KmcRng) -> Option<f64> {
        let s = self.log_noise_sd;
        let z: f64 = rng.sample(StandardNormal);
        self.inner.log_density(x).map(|v| v + s * z - 0.5 * s * s)
    }

    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.grad_log_density(x)
    }

    fn sample(&self, rng: &mut KmcRng) -> Option<Vec<f64>> {
        self.inner.sample(rng)
    }

    fn is_noisy(&self) -> bool {
        true
    }
}

/// Draws `n` ground-truth points as rows.
pub fn sample_matrix(target: &dyn Target, n: usize, rng: &mut KmcRng) -> Result<nalgebra::DMatrix<f64>> {
    let d = target.dim();
    let mut out = nalgebra::DMatrix::zeros(n, d);
    for i in 0..n {
        let x = target.sample(rng).ok_or_else(|| KmcError::invalid("target has no ground-truth sampler"))?;
        for (j, v) in x.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

pub(crate) fn std_normal_vec(d: usize, rng: &mut KmcRng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
pub(crate) fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}
