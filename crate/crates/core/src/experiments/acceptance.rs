use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{leapfrog, HamiltonianParams};
use crate::error::{KmcError, Result};
use crate::experiments::{mean, mean_se, step_acceptance, Bandwidth};
use crate::features::sample_basis;
use crate::kernels::KernelSpec;
use crate::rng::{derive_seed, rng_stream};
use crate::score_matching::{fit_finite_batch, GradientModel};
use crate::targets::{make_rotated_gamma_gaussian, sample_matrix, GaussianTarget, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkTarget {
    /// Standard Gaussian, fitted with a Gaussian kernel.
    Isotropic,
    /// Gamma(1,1) eigenvalues under a random rotation, fitted with a
    /// rational-quadratic kernel.
    RotatedGamma,
}

/// Hypothetical acceptance of kernel-induced trajectories started from
/// target draws, over a grid of dimensions and sizes `n = m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcceptanceBenchmarkConfig {
    pub target: BenchmarkTarget,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub n_starts: usize,
    pub hamiltonian: HamiltonianParams,
    pub sigma: Bandwidth,
    pub lambda: f64,
    /// Shape of the rational-quadratic kernel.
    pub rq_alpha: f64,
    pub seed: u64,
}

impl Default for AcceptanceBenchmarkConfig {
    fn default() -> Self {
        AcceptanceBenchmarkConfig {
            target: BenchmarkTarget::Isotropic,
            dims: vec![2, 8, 16],
            sizes: vec![200, 500, 1000, 2000],
            trials: 10,
            n_starts: 100,
            hamiltonian: HamiltonianParams::fixed(0.1, 20),
            sigma: Bandwidth::Cv,
            lambda: 1e-3,
            rq_alpha: 1.0,
            seed: 0,
        }
    }
}

impl AcceptanceBenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.sizes.is_empty() {
            return Err(KmcError::invalid("dimension and size grids must be nonempty"));
        }
        if self.trials == 0 || self.n_starts == 0 {
            return Err(KmcError::invalid("trials and n_starts must be at least 1"));
        }
        if self.dims.contains(&0) || self.sizes.iter().any(|&n| n < 2) {
            return Err(KmcError::invalid("dimensions must be positive and sizes at least 2"));
        }
        if self.target == BenchmarkTarget::RotatedGamma && self.sigma == Bandwidth::Cv {
            return Err(KmcError::invalid("bandwidth cross-validation needs the Gaussian kernel; set sigma to a number or \"median\""));
        }
        self.hamiltonian.validate()
    }
}

/// One trial: mean acceptance along trajectories, for the surrogate and
/// for the exact gradient from the same starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub d: usize,
    pub n: usize,
    pub trial: usize,
    pub sigma: f64,
    pub kmc: f64,
    pub hmc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCell {
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub kmc_mean: f64,
    pub kmc_se: f64,
    pub hmc_mean: f64,
}

pub fn run_acceptance_benchmark(config: &AcceptanceBenchmarkConfig) -> Result<Vec<AcceptanceRow>> {
    config.validate()?;
    let mut tasks = Vec::new();
    for &d in &config.dims {
        for &n in &config.sizes {
            for trial in 0..config.trials {
                tasks.push((d, n, trial));
            }
        }
    }
    tasks.into_par_iter().map(|(d, n, trial)| run_trial(config, d, n, trial)).collect()
}

fn run_trial(config: &AcceptanceBenchmarkConfig, d: usize, n: usize, trial: usize) -> Result<AcceptanceRow> {
    let seed = derive_seed(derive_seed(derive_seed(config.seed, d as u64), n as u64), trial as u64);
    let target = match config.target {
        BenchmarkTarget::Isotropic => GaussianTarget::isotropic(d, 1.0)?,
        BenchmarkTarget::RotatedGamma => make_rotated_gamma_gaussian(d, derive_seed(seed, 0))?,
    };
    let train = sample_matrix(&target, n, &mut rng_stream(seed, 1))?;
    let basis_seed = derive_seed(seed, 2);
    let sigma = config.sigma.resolve(&train, config.lambda, n.min(300), basis_seed)?;
    let spec = match config.target {
        BenchmarkTarget::Isotropic => KernelSpec::gaussian(sigma)?,
        BenchmarkTarget::RotatedGamma => KernelSpec::rational_quadratic(sigma, config.rq_alpha)?,
    };
    let model = fit_finite_batch(&train, &sample_basis(&spec, n, d, basis_seed)?, config.lambda)?;

    let mut rng = rng_stream(seed, 3);
    let u = |q: &[f64]| -target.log_density(q).unwrap_or(f64::NAN);
    let (mut kmc, mut hmc) = (Vec::new(), Vec::new());
    for _ in 0..config.n_starts {
        let q0 = target.sample(&mut rng).ok_or_else(|| KmcError::invalid("target cannot be sampled"))?;
        let p0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let (eps, steps) = config.hamiltonian.draw(&mut rng);
        let surrogate = leapfrog(
            |q, g| {
                model.grad_into(q, g);
                g.iter_mut().for_each(|v| *v = -*v);
            },
            &q0,
            &p0,
            eps,
            steps,
        )?;
        let exact = leapfrog(
            |q, g| {
                let grad = target.grad_log_density(q).unwrap_or_else(|| vec![f64::NAN; q.len()]);
                g.iter_mut().zip(grad).for_each(|(g, v)| *g = -v);
            },
            &q0,
            &p0,
            eps,
            steps,
        )?;
        kmc.push(mean(&step_acceptance(u, &surrogate)?));
        hmc.push(mean(&step_acceptance(u, &exact)?));
    }
    Ok(AcceptanceRow { d, n, trial, sigma, kmc: mean(&kmc), hmc: mean(&hmc) })
}

/// Averages over trials, in the grid order of the rows.
pub fn summarize(rows: &[AcceptanceRow]) -> Vec<AcceptanceCell> {
    let mut cells: Vec<AcceptanceCell> = Vec::new();
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.d, r.n)) {
            keys.push((r.d, r.n));
        }
    }
    for (d, n) in keys {
        let group: Vec<&AcceptanceRow> = rows.iter().filter(|r| r.d == d && r.n == n).collect();
        let kmc: Vec<f64> = group.iter().map(|r| r.kmc).collect();
        let hmc: Vec<f64> = group.iter().map(|r| r.hmc).collect();
        let (kmc_mean, kmc_se) = mean_se(&kmc);
        cells.push(AcceptanceCell { d, n, trials: group.len(), kmc_mean, kmc_se, hmc_mean: mean(&hmc) });
    }
    cells
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[AcceptanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| KmcError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AcceptanceBenchmarkConfig {
        AcceptanceBenchmarkConfig { dims: vec![2], sizes: vec![30, 60], trials: 2, n_starts: 5, ..Default::default() }
    }

    #[test]
    fn identical_seeds_give_identical_csv() {
        let write = |rows: &[AcceptanceRow]| {
            let mut buf = Vec::new();
            write_rows_csv(&mut buf, rows).unwrap();
            buf
        };
        let a = run_acceptance_benchmark(&tiny()).unwrap();
        let b = run_acceptance_benchmark(&tiny()).unwrap();
        assert_eq!(write(&a), write(&b));
        assert_eq!(a.len(), 4);
        let header = String::from_utf8(write(&a)).unwrap();
        assert!(header.starts_with("d,n,trial,sigma,kmc,hmc"));
    }

    #[test]
    fn rotated_target_runs_with_rq_kernel() {
        let cfg = AcceptanceBenchmarkConfig { target: BenchmarkTarget::RotatedGamma, sigma: Bandwidth::Median, ..tiny() };
        let rows = run_acceptance_benchmark(&cfg).unwrap();
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.kmc) && (0.0..=1.0).contains(&r.hmc)));
        let cells = summarize(&rows);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].trials, 2);
    }

    #[test]
    fn empty_grids_are_input_errors() {
        let cfg = AcceptanceBenchmarkConfig { sizes: vec![], ..tiny() };
        assert!(matches!(run_acceptance_benchmark(&cfg), Err(KmcError::InvalidInput(_))));
    }
}
