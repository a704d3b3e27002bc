//! Desk-scale versions of the benchmark studies. Each study is a pure
//! function of its config; the CLI only handles files.

pub mod abc;
pub mod acceptance;
pub mod banana;
pub mod fit;
pub mod trajectories;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{accept_prob, Trajectory};
use crate::error::{KmcError, Result};
use crate::score_matching::cv::log_grid;
use crate::score_matching::{cross_validate, CvEstimator};

pub use abc::{run_abc_study, AbcStudy, AbcStudyConfig, LognormalTable, MmdContrast};
pub use acceptance::{run_acceptance_benchmark, AcceptanceBenchmarkConfig, AcceptanceCell, AcceptanceRow, BenchmarkTarget};
pub use banana::{run_banana_study, BananaRow, BananaStudyConfig, BananaSummaryRow};
pub use fit::{fit_surrogate, Estimator, FitConfig, FitOutcome, FitReport};
pub use trajectories::{run_trajectory_study, TrajectoryStudy, TrajectoryStudyConfig};

/// Points used for the median heuristic and for bandwidth cross-validation.
const BANDWIDTH_POINTS: usize = 500;

/// How the Gaussian bandwidth of a surrogate is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median squared pairwise distance of the training points.
    Median,
    /// Five-fold cross-validation over `median · 2^k`, `k = −3..3`.
    Cv,
}

impl Bandwidth {
    pub fn resolve(&self, data: &DMatrix<f64>, lambda: f64, cv_m: usize, seed: u64) -> Result<f64> {
        match *self {
            Bandwidth::Fixed(s) => Ok(s),
            Bandwidth::Median => median_sq_distance(data),
            Bandwidth::Cv => {
                let med = median_sq_distance(data)?;
                let grid: Vec<f64> = log_grid(0.125, 8.0, 7).iter().map(|g| g * med).collect();
                let n = data.nrows().min(BANDWIDTH_POINTS);
                let sub = data.rows(0, n).into_owned();
                let cv = cross_validate(&sub, &grid, &[lambda], 5, CvEstimator::Finite { m: cv_m, basis_seed: seed }, seed)?;
                Ok(cv.one_se_choice().0)
            }
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
            Bandwidth::Median => s.serialize_str("median"),
            Bandwidth::Cv => s.serialize_str("cv"),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth::Fixed(v)),
            Raw::Text(s) if s == "median" => Ok(Bandwidth::Median),
            Raw::Text(s) if s == "cv" => Ok(Bandwidth::Cv),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("expected a number, \"median\" or \"cv\", got {s:?}"))),
        }
    }
}

/// Median of `‖x_i − x_j‖²` over pairs among the first 500 rows.
pub fn median_sq_distance(data: &DMatrix<f64>) -> Result<f64> {
    let n = data.nrows().min(BANDWIDTH_POINTS);
    if n < 2 {
        return Err(KmcError::invalid("median heuristic needs at least two points"));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            d2.push((data.row(i) - data.row(j)).norm_squared());
        }
    }
    d2.sort_by(f64::total_cmp);
    let med = d2[d2.len() / 2];
    if !(med > 0.0) {
        return Err(KmcError::invalid("median heuristic: points coincide"));
    }
    Ok(med)
}

/// Acceptance probability of stopping at each step of `traj`, scored with
/// the true Hamiltonian. Steps past a divergence score 0.
pub fn step_acceptance<U: Fn(&[f64]) -> f64>(potential: U, traj: &Trajectory) -> Result<Vec<f64>> {
    let energies = traj.energies(potential);
    let h0 = energies[0];
    let mut out = Vec::with_capacity(traj.steps);
    for k in 1..=traj.steps {
        out.push(match energies.get(k) {
            Some(&h) if h.is_finite() => accept_prob(h0, h)?,
            _ => 0.0,
        });
    }
    Ok(out)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, (var / xs.len() as f64).sqrt())
}
