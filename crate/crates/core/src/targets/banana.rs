use serde::{Deserialize, Serialize};

use crate::error::{check_positive, KmcError, Result};
use crate::rng::KmcRng;
use crate::targets::{std_normal_vec, Target};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BananaParams {
    pub d: usize,
    /// Twist.
    pub b: f64,
    /// Variance of the first coordinate.
    pub v: f64,
}

impl Default for BananaParams {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl BananaParams {
    /// The strongly twisted eight-dimensional benchmark.
    pub fn benchmark() -> Self {
        BananaParams { d: 8, b: 0.03, v: 100.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(KmcError::invalid(format!("banana needs d >= 2, got {}", self.d)));
        }
        check_positive("banana variance v", self.v)?;
        if !self.b.is_finite() {
            return Err(KmcError::invalid("banana twist must be finite"));
        }
        Ok(())
    }
}

/// Normalized log-density; assumes `y.len() == params.d`.
pub fn banana_log_density(y: &[f64], params: &BananaParams) -> f64 {
    let BananaParams { b, v, .. } = *params;
    let r = y[1] - b * (y[0] * y[0] - v);
    let rest: f64 = y[2..].iter().map(|t| t * t).sum();
    -0.5 * (y.len() as f64 * LN_2PI + v.ln()) - 0.5 * y[0] * y[0] / v - 0.5 * r * r - 0.5 * rest
}

pub fn banana_grad(y: &[f64], params: &BananaParams) -> Vec<f64> {
    let BananaParams { b, v, .. } = *params;
    let r = y[1] - b * (y[0] * y[0] - v);
    let mut g: Vec<f64> = y.iter().map(|t| -t).collect();
    g[0] = -y[0] / v + 2.0 * b * y[0] * r;
    g[1] = -r;
    g
}

/// Forward transform of a `N(0, diag(v, 1, …, 1))` draw.
pub fn banana_sample(params: &BananaParams, rng: &mut KmcRng) -> Vec<f64> {
    let mut x = std_normal_vec(params.d, rng);
    x[0] *= params.v.sqrt();
    x[1] += params.b * (x[0] * x[0] - params.v);
    x
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Banana {
    params: BananaParams,
}

impl Banana {
    pub fn new(params: BananaParams) -> Result<Self> {
        params.validate()?;
        Ok(Banana { params })
    }

    pub fn params(&self) -> &BananaParams {
        &self.params
    }
}

impl Target for Banana {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(banana_log_density(x, &self.params))
    }

    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(banana_grad(x, &self.params))
    }

    fn sample(&self, rng: &mut KmcRng) -> Option<Vec<f64>> {
        Some(banana_sample(&self.params, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::targets::fd_gradient;
    use crate::targets::GaussianTarget;
    use nalgebra::{DMatrix, DVector};
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn zero_twist_is_gaussian() {
        let p = BananaParams { d: 3, b: 0.0, v: 4.0 };
        let g = GaussianTarget::new(DVector::zeros(3), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1.0])))
            .unwrap();
        for y in [[0.0, 0.0, 0.0], [1.5, -0.3, 2.0], [-3.0, 1.0, 0.5]] {
            let a = banana_log_density(&y, &p);
            let b = g.log_density(&y).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_density_integrates_to_one() {
        let p = BananaParams { d: 2, b: 0.1, v: 4.0 };
        let h = 0.02;
        let mut total = 0.0;
        let mut y1 = -14.0;
        while y1 <= 14.0 {
            let mut y2 = -25.0;
            while y2 <= 25.0 {
                total += banana_log_density(&[y1, y2], &p).exp() * h * h;
                y2 += h;
            }
            y1 += h;
        }
        assert!((total - 1.0).abs() <= 1e-3, "mass {total}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = BananaParams::benchmark();
        let mut rng = rng_from_seed(12);
        for _ in 0..10 {
            let y = banana_sample(&p, &mut rng);
            let g = banana_grad(&y, &p);
            let fd = fd_gradient(|z| banana_log_density(z, &p), &y, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn samples_have_zero_mean() {
        let p = BananaParams::benchmark();
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| banana_sample(&p, &mut rng)).collect();
        for j in 0..p.d {
            let col: Vec<f64> = draws.iter().map(|y| y[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!(mean.abs() <= 3.0 * sd / (n as f64).sqrt(), "coordinate {j}: mean {mean}");
        }
    }

    #[test]
    fn zero_twist_first_coordinate_passes_ks() {
        let p = BananaParams { d: 2, b: 0.0, v: 9.0 };
        let mut rng = rng_from_seed(4);
        let n = 5000;
        let mut xs: Vec<f64> = (0..n).map(|_| banana_sample(&p, &mut rng)[0]).collect();
        xs.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, 3.0).unwrap();
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = normal.cdf(x);
                (c - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value
        assert!(ks <= 1.63 / (n as f64).sqrt(), "ks {ks}");
    }

    #[test]
    fn samples_are_consistent_with_density() {
        // E_B[1/B(y)] over a box equals its volume: importance check of
        // density against sampler.
        let p = BananaParams { d: 2, b: 0.1, v: 1.0 };
        let mut rng = rng_from_seed(5);
        let n = 200_000;
        let (lo, hi) = ([-1.0, -1.0], [1.0, 1.0]);
        let mut acc = 0.0;
        for _ in 0..n {
            let y = banana_sample(&p, &mut rng);
            if (0..2).all(|j| y[j] > lo[j] && y[j] < hi[j]) {
                acc += (-banana_log_density(&y, &p)).exp();
            }
        }
        let vol = acc / n as f64;
        assert!((vol - 4.0).abs() <= 0.05, "estimated volume {vol}");
    }

    #[test]
    fn rejects_one_dimension() {
        assert!(Banana::new(BananaParams { d: 1, b: 0.0, v: 1.0 }).is_err());
        assert!(Banana::new(BananaParams { d: 2, b: 0.0, v: 0.0 }).is_err());
    }
}
