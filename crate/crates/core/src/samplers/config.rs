use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::HamiltonianParams;
use crate::error::{check_positive, KmcError, Result};
use crate::score_matching::cv::log_grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rw,
    Hmc,
    KmcLite,
    KmcFinite,
}

/// A fixed value, or `"cv"` for grid cross-validation on chain history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tunable {
    Value(f64),
    Cv,
}

impl Tunable {
    pub fn value(&self) -> Option<f64> {
        match self {
            Tunable::Value(v) => Some(*v),
            Tunable::Cv => None,
        }
    }
}

impl Serialize for Tunable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tunable::Value(v) => s.serialize_f64(*v),
            Tunable::Cv => s.serialize_str("cv"),
        }
    }
}

impl<'de> Deserialize<'de> for Tunable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Tunable::Value(v)),
            Raw::Text(s) if s == "cv" => Ok(Tunable::Cv),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("expected a number or \"cv\", got {s:?}"))),
        }
    }
}

/// `a_t = min(1, scale·(t+1)^(−exponent))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSchedule {
    pub exponent: f64,
    pub scale: f64,
}

impl AdaptationSchedule {
    /// Adapts at every iteration.
    pub fn always() -> Self {
        AdaptationSchedule { exponent: 0.0, scale: 1.0 }
    }

    pub fn never() -> Self {
        AdaptationSchedule { exponent: 1.0, scale: 0.0 }
    }

    pub fn probability(&self, t: usize) -> f64 {
        (self.scale * ((t + 1) as f64).powf(-self.exponent)).min(1.0)
    }

    /// Vanishing adaptation needs `exponent ∈ (0, 1]`; the degenerate
    /// `always` and `never` schedules are also accepted.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.scale) {
            return Err(KmcError::invalid(format!("schedule scale must lie in [0, 1], got {}", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.exponent) {
            return Err(KmcError::invalid(format!("schedule exponent must lie in [0, 1], got {}", self.exponent)));
        }
        Ok(())
    }
}

impl Default for AdaptationSchedule {
    fn default() -> Self {
        AdaptationSchedule { exponent: 0.5, scale: 1.0 }
    }
}

/// Grids and data limits for resolving `"cv"` parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub sigma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    /// History size at which cross-validation first runs; no adaptation
    /// happens before that.
    pub min_points: usize,
    /// Cross-validation uses at most this many history points.
    pub max_points: usize,
    /// Feature count for finite-estimator cross-validation.
    pub finite_m: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            sigma_grid: log_grid(0.25, 32.0, 8),
            lambda_grid: log_grid(1e-4, 10.0, 6),
            folds: 5,
            min_points: 100,
            max_points: 500,
            finite_m: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub hamiltonian: HamiltonianParams,
    /// Lite sub-sample size `n`, or finite feature count `m`.
    pub n_basis: usize,
    pub sigma: Tunable,
    pub lambda: Tunable,
    pub schedule: AdaptationSchedule,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    /// Defaults to the origin.
    pub start: Option<Vec<f64>>,
    /// Adaptation stops from this iteration on; `"cv"` parameters are
    /// re-learned once at that point.
    pub freeze_after: Option<usize>,
    /// Points the surrogate is fitted on before the chain starts: target
    /// draws, or for targets without a sampler an adaptive RW pilot chain
    /// whose last state becomes the start.
    pub pretrain: usize,
    pub cv: CvSettings,
    pub rw_target_accept: f64,
    /// Defaults to `2.38/√d`.
    pub rw_initial_scale: Option<f64>,
    /// Tune the HMC step size toward this acceptance during burn-in.
    pub hmc_target_accept: Option<f64>,
    /// Use the incomplete-Cholesky path for lite fits with this tolerance.
    pub lite_lowrank_tol: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            algorithm: Algorithm::KmcFinite,
            hamiltonian: HamiltonianParams::default(),
            n_basis: 500,
            sigma: Tunable::Cv,
            lambda: Tunable::Cv,
            schedule: AdaptationSchedule::default(),
            seed: 0,
            iterations: 2200,
            burn_in: 200,
            start: None,
            freeze_after: None,
            pretrain: 0,
            cv: CvSettings::default(),
            rw_target_accept: 0.234,
            rw_initial_scale: None,
            hmc_target_accept: None,
            lite_lowrank_tol: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(KmcError::invalid("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(KmcError::invalid(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        self.hamiltonian.validate()?;
        self.schedule.validate()?;
        for t in [self.sigma, self.lambda] {
            if let Tunable::Value(v) = t {
                check_positive("kernel parameter", v)?;
            }
        }
        if matches!(self.algorithm, Algorithm::KmcLite | Algorithm::KmcFinite) && self.n_basis == 0 {
            return Err(KmcError::invalid("n_basis must be at least 1"));
        }
        if !(self.rw_target_accept > 0.0 && self.rw_target_accept < 1.0) {
            return Err(KmcError::invalid("RW target acceptance must lie in (0, 1)"));
        }
        if let Some(a) = self.hmc_target_accept {
            if !(a > 0.0 && a < 1.0) {
                return Err(KmcError::invalid("HMC target acceptance must lie in (0, 1)"));
            }
        }
        if let Some(s) = self.rw_initial_scale {
            check_positive("initial RW scale", s)?;
        }
        if self.sigma == Tunable::Cv || self.lambda == Tunable::Cv {
            let cv = &self.cv;
            if cv.sigma_grid.is_empty() || cv.lambda_grid.is_empty() {
                return Err(KmcError::invalid("cross-validation grids must be nonempty"));
            }
            if cv.folds < 2 || cv.min_points < cv.folds || cv.max_points < cv.min_points {
                return Err(KmcError::invalid("cross-validation needs 2 <= folds <= min_points <= max_points"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tunable_round_trips_through_json() {
        let a: Tunable = serde_json::from_str("\"cv\"").unwrap();
        let b: Tunable = serde_json::from_str("0.5").unwrap();
        assert_eq!((a, b), (Tunable::Cv, Tunable::Value(0.5)));
        assert!(serde_json::from_str::<Tunable>("\"auto\"").is_err());
        assert_eq!(serde_json::to_string(&Tunable::Cv).unwrap(), "\"cv\"");
    }

    #[test]
    fn config_defaults_fill_missing_keys() {
        let c: SamplerConfig = serde_json::from_str(r#"{"algorithm": "kmc_lite", "sigma": 2.0}"#).unwrap();
        assert_eq!(c.algorithm, Algorithm::KmcLite);
        assert_eq!(c.sigma, Tunable::Value(2.0));
        assert_eq!(c.lambda, Tunable::Cv);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = SamplerConfig { burn_in: 10, iterations: 10, ..Default::default() };
        assert!(c.validate().is_err());
        c.iterations = 0;
        assert!(c.validate().is_err());
        let c = SamplerConfig { schedule: AdaptationSchedule { exponent: 1.5, scale: 1.0 }, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SamplerConfig { rw_target_accept: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
