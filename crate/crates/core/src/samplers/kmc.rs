use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;

use crate::dynamics::kernel_induced_proposal;
use crate::error::{KmcError, Result};
use crate::features::sample_basis;
use crate::kernels::KernelSpec;
use crate::rng::{derive_seed, rng_from_seed, rng_stream, KmcRng};
use crate::samplers::baselines::{run_hmc, run_rw, start_point};
use crate::samplers::{
    should_adapt, Algorithm, ChainResult, FittedModel, IterationFlags, MhChain, Proposal, SamplerConfig, Tunable,
};
use crate::score_matching::{
    cross_validate, fit_finite_batch, fit_lite, fit_lite_lowrank, CvEstimator, FiniteModel, GradientModel, LiteModel,
    LowRankOptions,
};
use crate::targets::{sample_matrix, Target};

const PRETRAIN_STREAM: u64 = 1;
const BASIS_SEED_INDEX: u64 = 2;
const CV_SEED_INDEX: u64 = 3;
const PILOT_SEED_INDEX: u64 = 4;

/// Dispatches on `config.algorithm`.
pub fn run_sampler(target: &dyn Target, config: &SamplerConfig) -> Result<ChainResult> {
    match config.algorithm {
        Algorithm::Rw => run_rw(target, config),
        Algorithm::Hmc => run_hmc(target, config),
        Algorithm::KmcLite => run_kmc_lite(target, config),
        Algorithm::KmcFinite => run_kmc_finite(target, config),
    }
}

/// KMC with the lite estimator refitted on a fresh uniform sub-sample of the
/// chain history at each adaptation event.
pub fn run_kmc_lite(target: &dyn Target, config: &SamplerConfig) -> Result<ChainResult> {
    if config.algorithm != Algorithm::KmcLite {
        return Err(KmcError::invalid("run_kmc_lite needs algorithm = kmc_lite"));
    }
    Kmc::new(target, config)?.run()
}

/// KMC with the finite estimator; each adaptation event absorbs the current
/// state into the running statistics.
pub fn run_kmc_finite(target: &dyn Target, config: &SamplerConfig) -> Result<ChainResult> {
    if config.algorithm != Algorithm::KmcFinite {
        return Err(KmcError::invalid("run_kmc_finite needs algorithm = kmc_finite"));
    }
    Kmc::new(target, config)?.run()
}

enum Surrogate {
    Zero,
    Lite(LiteModel),
    Finite(FiniteModel),
}

impl Surrogate {
    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Surrogate::Zero => out.fill(0.0),
            Surrogate::Lite(m) => m.grad_into(x, out),
            Surrogate::Finite(m) => m.grad_into(x, out),
        }
    }
}

/// Pretraining points for targets that cannot be sampled: an adaptive RW
/// chain of `pretrain` iterations from the configured start.
fn pilot_chain(target: &dyn Target, config: &SamplerConfig) -> Result<DMatrix<f64>> {
    let pilot = SamplerConfig {
        algorithm: Algorithm::Rw,
        iterations: config.pretrain.max(2),
        burn_in: config.pretrain.max(2) - 1,
        seed: derive_seed(config.seed, PILOT_SEED_INDEX),
        ..config.clone()
    };
    Ok(run_rw(target, &pilot)?.samples)
}

struct Kmc<'a> {
    target: &'a dyn Target,
    config: &'a SamplerConfig,
    d: usize,
    /// Row-major history: pretraining draws, then every chain state.
    history: Vec<f64>,
    /// Rows that differ from their predecessor. Repeats only arise from
    /// consecutive rejections, and cross-validation must not see them: a
    /// held-out copy of a training point rewards overfitting.
    distinct: Vec<usize>,
    params: Option<(f64, f64)>,
    surrogate: Surrogate,
    /// Overrides the configured start when a pilot chain was run.
    start: Option<Vec<f64>>,
}

impl<'a> Kmc<'a> {
    fn new(target: &'a dyn Target, config: &'a SamplerConfig) -> Result<Self> {
        config.validate()?;
        let d = target.dim();
        let mut kmc = Kmc { target, config, d, history: Vec::new(), distinct: Vec::new(), params: None, surrogate: Surrogate::Zero, start: None };
        if config.pretrain > 0 {
            let draws = if target.sample(&mut rng_stream(config.seed, PRETRAIN_STREAM)).is_some() {
                sample_matrix(target, config.pretrain, &mut rng_stream(config.seed, PRETRAIN_STREAM))?
            } else {
                let pilot = pilot_chain(target, config)?;
                kmc.start = Some(pilot.row(pilot.nrows() - 1).iter().copied().collect());
                pilot
            };
            for row in draws.row_iter() {
                kmc.push_history(&row.iter().copied().collect::<Vec<f64>>());
            }
        }
        if let (Tunable::Value(s), Tunable::Value(l)) = (config.sigma, config.lambda) {
            kmc.params = Some((s, l));
        }
        Ok(kmc)
    }

    fn push_history(&mut self, x: &[f64]) {
        let n = self.rows();
        if n == 0 || self.history[(n - 1) * self.d..] != *x {
            self.distinct.push(n);
        }
        self.history.extend_from_slice(x);
    }

    fn rows(&self) -> usize {
        self.history.len() / self.d
    }

    fn history_matrix(&self, idx: Option<&[usize]>) -> DMatrix<f64> {
        match idx {
            None => DMatrix::from_row_slice(self.rows(), self.d, &self.history),
            Some(idx) => {
                let mut out = DMatrix::zeros(idx.len(), self.d);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..self.d {
                        out[(r, j)] = self.history[i * self.d + j];
                    }
                }
                out
            }
        }
    }

    fn uniform_subset(&self, k: usize, rng: &mut KmcRng) -> Vec<usize> {
        let n = self.rows();
        let mut idx = sample_indices(rng, n, k.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }

    fn basis_seed(&self) -> u64 {
        derive_seed(self.config.seed, BASIS_SEED_INDEX)
    }

    /// Cross-validates the `"cv"` parameters on a history sub-sample.
    fn cross_validate(&self, rng: &mut KmcRng) -> Result<(f64, f64)> {
        let cv = &self.config.cv;
        let pick = sample_indices(rng, self.distinct.len(), cv.max_points.min(self.distinct.len()));
        let mut idx: Vec<usize> = pick.iter().map(|i| self.distinct[i]).collect();
        idx.sort_unstable();
        let data = self.history_matrix(Some(&idx));
        let grid = |t: Tunable, g: &Vec<f64>| t.value().map_or_else(|| g.clone(), |v| vec![v]);
        let estimator = match self.config.algorithm {
            Algorithm::KmcLite => CvEstimator::Lite,
            _ => CvEstimator::Finite { m: cv.finite_m.min(self.config.n_basis), basis_seed: self.basis_seed() },
        };
        let result = cross_validate(
            &data,
            &grid(self.config.sigma, &cv.sigma_grid),
            &grid(self.config.lambda, &cv.lambda_grid),
            cv.folds,
            estimator,
            derive_seed(self.config.seed, CV_SEED_INDEX),
        )?;
        Ok(result.one_se_choice())
    }

    fn fit_lite_subsample(&self, sigma: f64, lambda: f64, rng: &mut KmcRng) -> Result<LiteModel> {
        let idx = self.uniform_subset(self.config.n_basis, rng);
        let z = self.history_matrix(Some(&idx));
        match self.config.lite_lowrank_tol {
            None => fit_lite(&z, sigma, lambda),
            Some(tol) => fit_lite_lowrank(&z, sigma, lambda, &LowRankOptions { chol_tol: tol, ..Default::default() }),
        }
    }

    fn finite_from_history(&self, sigma: f64, lambda: f64) -> Result<FiniteModel> {
        let basis = sample_basis(&KernelSpec::gaussian(sigma)?, self.config.n_basis, self.d, self.basis_seed())?;
        if self.rows() == 0 {
            FiniteModel::new(basis, lambda)
        } else {
            fit_finite_batch(&self.history_matrix(None), &basis, lambda)
        }
    }

    /// Refits from scratch with the given parameters.
    fn refit(&mut self, sigma: f64, lambda: f64, rng: &mut KmcRng) -> Result<()> {
        self.surrogate = match self.config.algorithm {
            Algorithm::KmcLite => Surrogate::Lite(self.fit_lite_subsample(sigma, lambda, rng)?),
            _ => Surrogate::Finite(self.finite_from_history(sigma, lambda)?),
        };
        Ok(())
    }

    /// One adaptation event at the current state, which is already the last
    /// history row.
    fn adapt(&mut self, x: &[f64], rng: &mut KmcRng, flags: &mut IterationFlags) -> bool {
        let (sigma, lambda) = match self.params {
            Some(p) => p,
            None => {
                if self.distinct.len() < self.config.cv.min_points {
                    return false;
                }
                match self.cross_validate(rng) {
                    Ok(p) => {
                        self.params = Some(p);
                        // the new finite model already contains x
                        if self.config.algorithm == Algorithm::KmcFinite {
                            if self.refit(p.0, p.1, rng).is_err() {
                                flags.set(IterationFlags::REFIT_FAILED);
                            }
                            return true;
                        }
                        p
                    }
                    Err(_) => {
                        flags.set(IterationFlags::REFIT_FAILED);
                        return true;
                    }
                }
            }
        };
        match self.config.algorithm {
            Algorithm::KmcLite => match self.fit_lite_subsample(sigma, lambda, rng) {
                Ok(m) => self.surrogate = Surrogate::Lite(m),
                Err(_) => flags.set(IterationFlags::REFIT_FAILED),
            },
            _ => {
                if let Surrogate::Zero = self.surrogate {
                    // first event with fixed parameters: start from the
                    // history gathered so far, x included
                    match self.finite_from_history(sigma, lambda) {
                        Ok(m) => self.surrogate = Surrogate::Finite(m),
                        Err(_) => flags.set(IterationFlags::REFIT_FAILED),
                    }
                } else if let Surrogate::Finite(m) = &mut self.surrogate {
                    // absorb validates before touching any state, so on error
                    // the previous model is kept as is
                    match m.absorb(x) {
                        Ok(r) if r.rebuilt => flags.set(IterationFlags::REFACTORIZED),
                        Ok(_) => {}
                        Err(_) => flags.set(IterationFlags::REFIT_FAILED),
                    }
                }
            }
        }
        true
    }

    /// Re-learns `"cv"` parameters on the full history and refits once.
    fn relearn(&mut self, rng: &mut KmcRng, flags: &mut IterationFlags) -> bool {
        if self.distinct.len() < self.config.cv.folds {
            return false;
        }
        let p = match self.cross_validate(rng) {
            Ok(p) => p,
            Err(_) => {
                flags.set(IterationFlags::REFIT_FAILED);
                return true;
            }
        };
        self.params = Some(p);
        if self.refit(p.0, p.1, rng).is_err() {
            flags.set(IterationFlags::REFIT_FAILED);
        }
        true
    }

    fn run(mut self) -> Result<ChainResult> {
        let config = self.config;
        let mut rng = rng_from_seed(config.seed);
        let start = self.start.clone().unwrap_or_else(|| start_point(self.target, config));
        let mut chain = MhChain::new(self.target, start, config.iterations, &mut rng)?;

        if config.pretrain > 0 && self.params.is_none() {
            let mut flags = IterationFlags::default();
            self.relearn(&mut rng, &mut flags);
        } else if let (Some((s, l)), true) = (self.params, config.pretrain > 0) {
            self.refit(s, l, &mut rng)?;
        }
        let needs_cv = config.sigma == Tunable::Cv || config.lambda == Tunable::Cv;

        for t in 0..config.iterations {
            let x = chain.state.position.clone();
            self.push_history(&x);
            let mut flags = IterationFlags::default();
            let frozen = config.freeze_after.is_some_and(|f| t >= f);
            let adapted = if config.freeze_after == Some(t) && needs_cv {
                self.relearn(&mut rng, &mut flags)
            } else if !frozen && should_adapt(&config.schedule, t, &mut rng) {
                self.adapt(&x, &mut rng, &mut flags)
            } else {
                false
            };
            let surrogate = &self.surrogate;
            let proposal =
                kernel_induced_proposal(|q, out| surrogate.grad_into(q, out), &x, &config.hamiltonian, &mut rng)
                    .map(Proposal::from_hamiltonian);
            chain.step(proposal, adapted, flags, &mut rng);
        }

        let mut result = chain.finish(config.burn_in);
        result.kernel_params = self.params;
        result.final_model = match self.surrogate {
            Surrogate::Zero => None,
            Surrogate::Lite(m) => Some(FittedModel::Lite(m)),
            Surrogate::Finite(m) => Some(FittedModel::Finite(m)),
        };
        Ok(result)
    }
}
