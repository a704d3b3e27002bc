//! Observed-data fixtures shipped with the crate.
//!
//! Both files are JSON and are regenerated bit-exactly by the generator
//! functions below from the seed stored inside them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KmcError, Result};
use crate::rng::rng_from_seed;
use crate::targets::abc::skew_normal_simulate;

pub const ABC_OBSERVED_JSON: &str = include_str!("../../fixtures/abc_observed.json");
pub const LOGNORMAL_DATA_JSON: &str = include_str!("../../fixtures/lognormal_data.json");

const ABC_FORMAT: &str = "kmc-abc-observed-1";
const LOGNORMAL_FORMAT: &str = "kmc-lognormal-data-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbcObserved {
    pub format: String,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// One skew-normal draw per row.
    pub observations: Vec<Vec<f64>>,
}

impl AbcObserved {
    /// Mean of the observations.
    pub fn summary(&self) -> Vec<f64> {
        let d = self.theta.len();
        let n = self.observations.len() as f64;
        (0..d).map(|j| self.observations.iter().map(|y| y[j]).sum::<f64>() / n).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let obs: AbcObserved = serde_json::from_str(text)?;
        if obs.format != ABC_FORMAT {
            return Err(KmcError::invalid(format!("unknown fixture format {:?}", obs.format)));
        }
        let d = obs.theta.len();
        if d == 0 || obs.alpha.len() != d || obs.observations.is_empty() || obs.observations.iter().any(|y| y.len() != d) {
            return Err(KmcError::invalid("inconsistent dimensions in observed ABC data"));
        }
        Ok(obs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LognormalBenchmark {
    pub format: String,
    pub seed: u64,
    /// Data-generating mean of `log y`.
    pub mu: f64,
    pub tau: f64,
    pub mu0: f64,
    pub tau0: f64,
    pub epsilon: f64,
    pub data: Vec<f64>,
}

impl LognormalBenchmark {
    pub fn parse(text: &str) -> Result<Self> {
        let b: LognormalBenchmark = serde_json::from_str(text)?;
        if b.format != LOGNORMAL_FORMAT {
            return Err(KmcError::invalid(format!("unknown fixture format {:?}", b.format)));
        }
        Ok(b)
    }
}

pub fn generate_abc_observed(seed: u64, theta: &[f64], alpha: &[f64], count: usize) -> Result<AbcObserved> {
    let mut rng = rng_from_seed(seed);
    let observations = (0..count).map(|_| skew_normal_simulate(theta, alpha, &mut rng)).collect::<Result<_>>()?;
    Ok(AbcObserved { format: ABC_FORMAT.into(), seed, theta: theta.to_vec(), alpha: alpha.to_vec(), observations })
}

pub fn generate_lognormal_benchmark(seed: u64) -> LognormalBenchmark {
    let (mu, tau) = (2.0, 1.0);
    let mut rng = rng_from_seed(seed);
    let data = (0..100)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (mu + z / f64::sqrt(tau)).exp()
        })
        .collect();
    LognormalBenchmark { format: LOGNORMAL_FORMAT.into(), seed, mu, tau, mu0: 0.0, tau0: 0.01, epsilon: 0.1, data }
}

pub fn abc_observed() -> AbcObserved {
    AbcObserved::parse(ABC_OBSERVED_JSON).expect("shipped ABC fixture parses")
}

pub fn lognormal_benchmark() -> LognormalBenchmark {
    LognormalBenchmark::parse(LOGNORMAL_DATA_JSON).expect("shipped log-normal fixture parses")
}
