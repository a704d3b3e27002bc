use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{autocorrelation, mmd_poly3};
use crate::dynamics::HamiltonianParams;
use crate::error::{KmcError, Result};
use crate::rng::derive_seed;
use crate::samplers::{run_kmc_lite, run_rw, Algorithm, ChainResult, CvSettings, SamplerConfig, Tunable};
use crate::targets::fixtures::{abc_observed, lognormal_benchmark};
use crate::targets::lognormal::{linear_grid, true_posterior_on_grid};
use crate::targets::{lognormal_true_posterior, synthetic_gaussian_posterior, AbcParams, AbcPosterior};

/// Pseudo-marginal KMC-lite against RW on the skew-normal ABC posterior,
/// plus the log-normal synthetic-likelihood table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbcStudyConfig {
    pub params: AbcParams,
    pub iterations: usize,
    pub burn_in: usize,
    /// KMC learns `"cv"` parameters from history, re-learns them at this
    /// iteration and stops adapting.
    pub freeze_after: usize,
    /// Length of the RW pilot whose states seed KMC's history.
    pub pilot: usize,
    pub n_basis: usize,
    pub sigma: Tunable,
    pub lambda: Tunable,
    pub cv: CvSettings,
    pub hamiltonian: HamiltonianParams,
    pub rw_target_accept: f64,
    /// Defaults to the observed summary.
    pub start: Option<Vec<f64>>,
    pub max_lag: usize,
    /// Shift of the contrast copies in the marginal check.
    pub shift: f64,
    /// Length of the RW reference chain for the MMD trace; 0 disables it.
    pub reference_iterations: usize,
    pub reference_thin: usize,
    pub trace_points: usize,
    pub lognormal_grid: usize,
    pub seed: u64,
}

impl Default for AbcStudyConfig {
    fn default() -> Self {
        AbcStudyConfig {
            params: AbcParams::benchmark(),
            iterations: 5200,
            burn_in: 200,
            freeze_after: 200,
            pilot: 200,
            n_basis: 1000,
            sigma: Tunable::Cv,
            lambda: Tunable::Cv,
            cv: CvSettings::default(),
            hamiltonian: HamiltonianParams { eps_min: 0.01, eps_max: 0.1, steps_min: 50, steps_max: 50 },
            rw_target_accept: 0.234,
            start: None,
            max_lag: 200,
            shift: 0.5,
            reference_iterations: 20_000,
            reference_thin: 10,
            trace_points: 26,
            lognormal_grid: 4001,
            seed: 0,
        }
    }
}

/// Marginal agreement check: the two chains must be closer to each other
/// than either is to a shifted copy of itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdContrast {
    pub between: f64,
    pub kmc_vs_shifted: f64,
    pub rw_vs_shifted: f64,
    pub shift: f64,
    pub pass: bool,
}

pub fn mmd_contrast(kmc: &[f64], rw: &[f64], shift: f64) -> Result<MmdContrast> {
    let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
    let shifted = |v: &[f64]| col(&v.iter().map(|x| x + shift).collect::<Vec<_>>());
    let between = mmd_poly3(&col(kmc), &col(rw))?;
    let kmc_vs_shifted = mmd_poly3(&col(kmc), &shifted(kmc))?;
    let rw_vs_shifted = mmd_poly3(&col(rw), &shifted(rw))?;
    Ok(MmdContrast { between, kmc_vs_shifted, rw_vs_shifted, shift, pass: between < kmc_vs_shifted.min(rw_vs_shifted) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LognormalTable {
    pub mu: Vec<f64>,
    pub true_density: Vec<f64>,
    pub synthetic_density: Vec<f64>,
    pub true_mean: f64,
    pub synthetic_mean: f64,
}

impl LognormalTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mu", "true_density", "synthetic_density"]).map_err(csv_err)?;
        for i in 0..self.mu.len() {
            w.write_record([self.mu[i], self.true_density[i], self.synthetic_density[i]].map(|v| v.to_string()))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tabulates both posteriors on the shipped benchmark data.
pub fn lognormal_table(grid_points: usize) -> Result<LognormalTable> {
    let b = lognormal_benchmark();
    let (mean, prec) = lognormal_true_posterior(&b.data, b.mu0, b.tau0, b.tau)?;
    // wide enough for both posteriors; the synthetic one is checked for
    // truncation when normalized
    let half = 12.0 / prec.sqrt() + 1.0;
    let grid = linear_grid(mean - half, mean + half, grid_points);
    let truth = true_posterior_on_grid(&b.data, &grid, b.mu0, b.tau0, b.tau)?;
    let synth = synthetic_gaussian_posterior(&b.data, &grid, b.mu0, b.tau0, b.tau, b.epsilon)?;
    Ok(LognormalTable {
        true_mean: mean,
        synthetic_mean: synth.mean(),
        mu: grid,
        true_density: truth.density,
        synthetic_density: synth.density,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub kmc: f64,
    pub rw: f64,
}

#[derive(Clone, Debug)]
pub struct AbcStudy {
    pub kmc: ChainResult,
    pub rw: ChainResult,
    pub kmc_acf: Vec<f64>,
    pub rw_acf: Vec<f64>,
    pub contrast: MmdContrast,
    /// MMD of each chain prefix, burn-in included, against the reference.
    pub mmd_trace: Vec<TracePoint>,
    pub lognormal: LognormalTable,
}

impl AbcStudy {
    /// `lag, kmc, rw` autocorrelations of `θ₁` after burn-in.
    pub fn write_acf_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lag", "kmc", "rw"]).map_err(csv_err)?;
        for k in 0..self.kmc_acf.len().min(self.rw_acf.len()) {
            w.write_record([k.to_string(), self.kmc_acf[k].to_string(), self.rw_acf[k].to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.mmd_trace {
            w.serialize(p).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> KmcError {
    KmcError::Io(std::io::Error::other(e))
}

fn first_coordinate(chain: &ChainResult) -> Vec<f64> {
    chain.kept_samples().column(0).iter().copied().collect()
}

pub fn run_abc_study(config: &AbcStudyConfig) -> Result<AbcStudy> {
    let observed = abc_observed().summary();
    let target = AbcPosterior::new(config.params.clone(), observed.clone())?;
    let base = SamplerConfig {
        iterations: config.iterations,
        burn_in: config.burn_in,
        start: Some(config.start.clone().unwrap_or(observed)),
        rw_target_accept: config.rw_target_accept,
        ..Default::default()
    };
    let kmc_cfg = SamplerConfig {
        algorithm: Algorithm::KmcLite,
        hamiltonian: config.hamiltonian,
        n_basis: config.n_basis,
        sigma: config.sigma,
        lambda: config.lambda,
        cv: config.cv.clone(),
        freeze_after: Some(config.freeze_after),
        pretrain: config.pilot,
        seed: derive_seed(config.seed, 1),
        ..base.clone()
    };
    let rw_cfg = SamplerConfig { algorithm: Algorithm::Rw, seed: derive_seed(config.seed, 2), ..base.clone() };
    let (kmc, rw) = rayon::join(|| run_kmc_lite(&target, &kmc_cfg), || run_rw(&target, &rw_cfg));
    let (kmc, rw) = (kmc?, rw?);

    let (k1, r1) = (first_coordinate(&kmc), first_coordinate(&rw));
    let lag = config.max_lag.min(k1.len() - 1).min(r1.len() - 1);
    let kmc_acf = autocorrelation(&k1, lag)?;
    let rw_acf = autocorrelation(&r1, lag)?;
    let contrast = mmd_contrast(&k1, &r1, config.shift)?;

    let mut mmd_trace = Vec::new();
    if config.reference_iterations > 0 {
        let ref_cfg = SamplerConfig {
            algorithm: Algorithm::Rw,
            iterations: config.reference_iterations + config.burn_in,
            seed: derive_seed(config.seed, 3),
            ..base.clone()
        };
        let reference = run_rw(&target, &ref_cfg)?.kept_samples();
        let thin = config.reference_thin.max(1);
        let idx: Vec<usize> = (0..reference.nrows()).step_by(thin).collect();
        let reference = reference.select_rows(idx.iter());
        let points = config.trace_points.max(1);
        for i in 1..=points {
            let t = (config.iterations * i / points).max(2);
            mmd_trace.push(TracePoint {
                iteration: t,
                kmc: mmd_poly3(&kmc.samples.rows(0, t).into_owned(), &reference)?,
                rw: mmd_poly3(&rw.samples.rows(0, t).into_owned(), &reference)?,
            });
        }
    }

    Ok(AbcStudy { kmc, rw, kmc_acf, rw_acf, contrast, mmd_trace, lognormal: lognormal_table(config.lognormal_grid)? })
}
