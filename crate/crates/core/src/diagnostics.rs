//! Chain-quality metrics: autocorrelation, effective sample size, MMD,
//! empirical-mean norm and acceptance rate.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KmcError, Result};

/// Normalized autocorrelations `ρ_0..=ρ_max_lag` via FFT.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let t = series.len();
    if max_lag == 0 || max_lag >= t {
        return Err(KmcError::invalid(format!("need 1 <= max_lag < T, got max_lag={max_lag}, T={t}")));
    }
    let acov = autocovariance(series);
    if !(acov[0] > 0.0) {
        return Err(KmcError::numeric("series has zero variance"));
    }
    Ok(acov[..=max_lag].iter().map(|c| c / acov[0]).collect())
}

/// Biased autocovariances at every lag, `Σ_t (x_t − x̄)(x_{t+k} − x̄) / T`.
fn autocovariance(series: &[f64]) -> Vec<f64> {
    let t = series.len();
    let mean = series.iter().sum::<f64>() / t as f64;
    let size = (2 * t).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..t].iter().map(|c| c.re / (size as f64 * t as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub per_dim: Vec<f64>,
    pub min_ess: f64,
    /// Last lag included in each dimension's autocorrelation sum.
    pub truncation_lags: Vec<usize>,
    /// Dimensions whose samples are constant; their ESS is reported as `T`.
    pub degenerate: Vec<bool>,
}

/// Effective sample size per dimension with Geyer's initial positive
/// sequence truncation, capped at `T`.
pub fn min_ess(samples: &DMatrix<f64>) -> Result<EssReport> {
    let (t, d) = (samples.nrows(), samples.ncols());
    if t < 10 {
        return Err(KmcError::invalid(format!("ESS needs at least 10 samples, got {t}")));
    }
    if d == 0 {
        return Err(KmcError::invalid("samples have no columns"));
    }
    let mut per_dim = Vec::with_capacity(d);
    let mut lags = Vec::with_capacity(d);
    let mut degenerate = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = samples.column(j).iter().copied().collect();
        let acov = autocovariance(&col);
        if !(acov[0] > 0.0) {
            per_dim.push(t as f64);
            lags.push(0);
            degenerate.push(true);
            continue;
        }
        let rho: Vec<f64> = acov.iter().map(|c| c / acov[0]).collect();
        // Γ_k = ρ_2k + ρ_2k+1 summed while positive; τ = −1 + 2 Σ Γ_k
        let mut sum = 0.0;
        let mut last = 0;
        let mut k = 0;
        while 2 * k + 1 < t {
            let gamma = rho[2 * k] + rho[2 * k + 1];
            if gamma <= 0.0 {
                break;
            }
            sum += gamma;
            last = 2 * k + 1;
            k += 1;
        }
        let tau = (2.0 * sum - 1.0).max(1.0 / t as f64);
        per_dim.push((t as f64 / tau).min(t as f64));
        lags.push(last);
        degenerate.push(false);
    }
    let min_ess = per_dim.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EssReport { per_dim, min_ess, truncation_lags: lags, degenerate })
}

fn rows_sorted(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for j in 0..x.ncols() {
            match x[(a, j)].total_cmp(&x[(b, j)]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    });
    crate::linalg::select_rows(x, &idx)
}

fn mean_poly3(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let g = a * b.transpose();
    g.iter().map(|v| (1.0 + v).powi(3)).sum::<f64>() / (a.nrows() * b.nrows()) as f64
}

/// `√MMD²` with kernel `(1 + ⟨x, y⟩)³`, biased V-statistic.
///
/// Rows are put in a canonical order first, so two copies of the same
/// multiset give exactly 0.
pub fn mmd_poly3(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_dim(x.ncols(), y.ncols())?;
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(KmcError::invalid("MMD needs nonempty sample sets"));
    }
    let (xs, ys) = (rows_sorted(x), rows_sorted(y));
    let v = mean_poly3(&xs, &xs) + mean_poly3(&ys, &ys) - 2.0 * mean_poly3(&xs, &ys);
    Ok(v.max(0.0).sqrt())
}

/// `‖column means‖₂`.
pub fn mean_norm(samples: &DMatrix<f64>) -> Result<f64> {
    if samples.nrows() == 0 {
        return Err(KmcError::invalid("mean norm needs at least one sample"));
    }
    Ok(samples.row_mean().norm())
}

/// Fraction of accepted flags after `burn_in`.
pub fn acceptance_rate(flags: &[bool], burn_in: usize) -> Result<f64> {
    if burn_in >= flags.len() {
        return Err(KmcError::invalid(format!("burn-in {burn_in} leaves no flags out of {}", flags.len())));
    }
    let kept = &flags[burn_in..];
    Ok(kept.iter().filter(|&&f| f).count() as f64 / kept.len() as f64)
}

/// Kolmogorov-Smirnov statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(KmcError::invalid("KS statistic needs samples"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max))
}
