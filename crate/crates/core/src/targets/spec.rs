use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::targets::fixtures::abc_observed;
use crate::targets::{make_rotated_gamma_gaussian, AbcParams, AbcPosterior, Banana, BananaParams, GaussianTarget, NoisyTarget, Target};

fn one() -> f64 {
    1.0
}

/// A target chosen by name with its parameter block, as written in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TargetSpec {
    Gaussian {
        d: usize,
        #[serde(default = "one")]
        variance: f64,
    },
    RotatedGamma {
        d: usize,
        #[serde(default)]
        seed: u64,
    },
    Banana(BananaParams),
    /// Isotropic Gaussian seen through log-normal multiplicative noise.
    NoisyGaussian {
        d: usize,
        #[serde(default = "one")]
        variance: f64,
        log_noise_sd: f64,
    },
    /// Skew-normal ABC posterior on the shipped observed data.
    Abc(AbcParams),
}

impl TargetSpec {
    pub fn build(&self) -> Result<Box<dyn Target>> {
        Ok(match self {
            TargetSpec::Gaussian { d, variance } => Box::new(GaussianTarget::isotropic(*d, *variance)?),
            TargetSpec::RotatedGamma { d, seed } => Box::new(make_rotated_gamma_gaussian(*d, *seed)?),
            TargetSpec::Banana(p) => Box::new(Banana::new(*p)?),
            TargetSpec::NoisyGaussian { d, variance, log_noise_sd } => {
                Box::new(NoisyTarget::new(GaussianTarget::isotropic(*d, *variance)?, *log_noise_sd)?)
            }
            TargetSpec::Abc(p) => Box::new(AbcPosterior::new(p.clone(), abc_observed().summary())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_parse_by_name() {
        let s: TargetSpec = serde_json::from_str(r#"{"name": "banana", "d": 2, "b": 0.1, "v": 1.0}"#).unwrap();
        assert_eq!(s.build().unwrap().dim(), 2);
        let s: TargetSpec = serde_json::from_str(r#"{"name": "banana"}"#).unwrap();
        assert_eq!(s, TargetSpec::Banana(BananaParams::benchmark()));
        let s: TargetSpec = serde_json::from_str(r#"{"name": "gaussian", "d": 3}"#).unwrap();
        assert_eq!(s, TargetSpec::Gaussian { d: 3, variance: 1.0 });
        let s: TargetSpec = serde_json::from_str(r#"{"name": "abc", "epsilon": 0.55, "n_lik": 10, "batch": 10, "alpha": [10,10,10,10,10,10,10,10,10,10], "prior_variance": 100}"#).unwrap();
        assert!(s.build().unwrap().is_noisy());
        assert!(serde_json::from_str::<TargetSpec>(r#"{"name": "unknown"}"#).is_err());
        assert!(TargetSpec::Gaussian { d: 0, variance: 1.0 }.build().is_err());
    }
}
