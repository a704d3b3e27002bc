use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mean_norm, min_ess};
use crate::dynamics::HamiltonianParams;
use crate::error::{KmcError, Result};
use crate::experiments::mean_se;
use crate::rng::{derive_seed, rng_stream};
use crate::samplers::{
    run_hmc, run_kmc_finite, run_kmc_lite, run_rw, AdaptationSchedule, Algorithm, ChainResult, CvSettings,
    SamplerConfig, Tunable,
};
use crate::targets::{banana_sample, Banana, BananaParams};

/// Head-to-head runs on the banana. Every run starts from a fresh target
/// draw; KMC surrogates are fitted on `n` ground-truth draws before the
/// chain starts and then held fixed, with HMC's tuned step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BananaStudyConfig {
    pub params: BananaParams,
    pub iterations: usize,
    pub burn_in: usize,
    /// Ladder of `n = m`.
    pub sizes: Vec<usize>,
    pub runs: usize,
    /// HMC step range before tuning; KMC uses it after HMC's rescaling.
    pub hamiltonian: HamiltonianParams,
    pub hmc_target_accept: f64,
    pub rw_target_accept: f64,
    pub sigma: Tunable,
    pub lambda: Tunable,
    pub cv: CvSettings,
    pub include_lite: bool,
    pub seed: u64,
}

impl Default for BananaStudyConfig {
    fn default() -> Self {
        BananaStudyConfig {
            params: BananaParams::benchmark(),
            iterations: 2200,
            burn_in: 200,
            sizes: vec![200, 500, 1000, 2000],
            runs: 10,
            hamiltonian: HamiltonianParams { eps_min: 0.05, eps_max: 0.1, steps_min: 5, steps_max: 20 },
            hmc_target_accept: 0.8,
            rw_target_accept: 0.234,
            sigma: Tunable::Cv,
            lambda: Tunable::Cv,
            cv: CvSettings::default(),
            include_lite: false,
            seed: 0,
        }
    }
}

/// Metrics of one chain after burn-in. `n` is empty for the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BananaRow {
    pub sampler: String,
    pub n: Option<usize>,
    pub run: usize,
    pub acceptance: f64,
    pub mean_norm: f64,
    pub min_ess: f64,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BananaSummaryRow {
    pub sampler: String,
    pub n: Option<usize>,
    pub runs: usize,
    pub acceptance_mean: f64,
    pub mean_norm_mean: f64,
    pub mean_norm_se: f64,
    pub min_ess_mean: f64,
    pub min_ess_se: f64,
}

#[derive(Clone, Debug)]
pub struct BananaStudy {
    pub rows: Vec<BananaRow>,
    /// `(sampler, n, run, seconds)`; kept apart from the deterministic rows.
    pub timings: Vec<(String, Option<usize>, usize, f64)>,
}

impl BananaStudy {
    pub fn summary(&self) -> Vec<BananaSummaryRow> {
        let mut keys: Vec<(String, Option<usize>)> = Vec::new();
        for r in &self.rows {
            let k = (r.sampler.clone(), r.n);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(sampler, n)| {
                let group: Vec<&BananaRow> = self.rows.iter().filter(|r| r.sampler == sampler && r.n == n).collect();
                let col = |f: fn(&BananaRow) -> f64| group.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let (acceptance_mean, _) = mean_se(&col(|r| r.acceptance));
                let (mean_norm_mean, mean_norm_se) = mean_se(&col(|r| r.mean_norm));
                let (min_ess_mean, min_ess_se) = mean_se(&col(|r| r.min_ess));
                BananaSummaryRow {
                    sampler,
                    n,
                    runs: group.len(),
                    acceptance_mean,
                    mean_norm_mean,
                    mean_norm_se,
                    min_ess_mean,
                    min_ess_se,
                }
            })
            .collect()
    }

    pub fn find(&self, sampler: &str, n: Option<usize>) -> Option<BananaSummaryRow> {
        self.summary().into_iter().find(|s| s.sampler == sampler && s.n == n)
    }
}

pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| KmcError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_banana_study(config: &BananaStudyConfig) -> Result<BananaStudy> {
    if config.runs == 0 {
        return Err(KmcError::invalid("runs must be at least 1"));
    }
    config.params.validate()?;
    let per_run: Vec<Result<Vec<(BananaRow, f64)>>> =
        (0..config.runs).into_par_iter().map(|r| run_once(config, r)).collect();
    let mut study = BananaStudy { rows: Vec::new(), timings: Vec::new() };
    for run in per_run {
        for (row, secs) in run? {
            study.timings.push((row.sampler.clone(), row.n, row.run, secs));
            study.rows.push(row);
        }
    }
    Ok(study)
}

fn row(sampler: &str, n: Option<usize>, run: usize, chain: &ChainResult) -> Result<(BananaRow, f64)> {
    let kept = chain.kept_samples();
    let (sigma, lambda) = chain.kernel_params.unzip();
    Ok((
        BananaRow {
            sampler: sampler.into(),
            n,
            run,
            acceptance: chain.acceptance_rate(),
            mean_norm: mean_norm(&kept)?,
            min_ess: min_ess(&kept)?.min_ess,
            sigma,
            lambda,
        },
        chain.elapsed_secs,
    ))
}

fn run_once(config: &BananaStudyConfig, run: usize) -> Result<Vec<(BananaRow, f64)>> {
    let target = Banana::new(config.params)?;
    let seed = derive_seed(config.seed, run as u64);
    let start = banana_sample(&config.params, &mut rng_stream(seed, 0));
    let base = SamplerConfig {
        iterations: config.iterations,
        burn_in: config.burn_in,
        start: Some(start),
        rw_target_accept: config.rw_target_accept,
        ..Default::default()
    };
    let mut rows = Vec::new();

    let rw = run_rw(&target, &SamplerConfig { algorithm: Algorithm::Rw, seed: derive_seed(seed, 1), ..base.clone() })?;
    rows.push(row("rw", None, run, &rw)?);

    let hmc_cfg = SamplerConfig {
        algorithm: Algorithm::Hmc,
        hamiltonian: config.hamiltonian,
        hmc_target_accept: Some(config.hmc_target_accept),
        seed: derive_seed(seed, 2),
        ..base.clone()
    };
    let hmc = run_hmc(&target, &hmc_cfg)?;
    rows.push(row("hmc", None, run, &hmc)?);
    let tuned = config.hamiltonian.scaled(hmc.step_scale.unwrap_or(1.0));

    for &n in &config.sizes {
        let kmc = SamplerConfig {
            algorithm: Algorithm::KmcFinite,
            hamiltonian: tuned,
            n_basis: n,
            pretrain: n,
            sigma: config.sigma,
            lambda: config.lambda,
            cv: config.cv.clone(),
            schedule: AdaptationSchedule::never(),
            seed: derive_seed(seed, 10 + n as u64),
            ..base.clone()
        };
        rows.push(row("kmc_finite", Some(n), run, &run_kmc_finite(&target, &kmc)?)?);
        if config.include_lite {
            let lite = SamplerConfig { algorithm: Algorithm::KmcLite, ..kmc };
            rows.push(row("kmc_lite", Some(n), run, &run_kmc_lite(&target, &lite)?)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_study_has_every_sampler_and_is_deterministic() {
        let cfg = BananaStudyConfig {
            params: BananaParams { d: 2, b: 0.1, v: 4.0 },
            iterations: 300,
            burn_in: 100,
            sizes: vec![50],
            runs: 2,
            sigma: Tunable::Value(2.0),
            lambda: Tunable::Value(1e-3),
            include_lite: true,
            ..Default::default()
        };
        let a = run_banana_study(&cfg).unwrap();
        let b = run_banana_study(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        let samplers: Vec<&str> = a.rows.iter().filter(|r| r.run == 0).map(|r| r.sampler.as_str()).collect();
        assert_eq!(samplers, ["rw", "hmc", "kmc_finite", "kmc_lite"]);
        let summary = a.summary();
        assert_eq!(summary.len(), 4);
        assert!(summary.iter().all(|s| s.runs == 2));
        let mut buf = Vec::new();
        write_csv(&mut buf, &a.rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("sampler,n,run,acceptance,mean_norm,min_ess,sigma,lambda"));
    }
}
