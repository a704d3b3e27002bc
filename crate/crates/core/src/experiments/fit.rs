use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KmcError, Result};
use crate::features::sample_basis;
use crate::io::{LiteRecord, LoadedModel, ModelFile};
use crate::kernels::KernelSpec;
use crate::linalg::select_rows;
use crate::rng::{derive_seed, rng_stream};
use crate::samplers::{CvSettings, Tunable};
use crate::score_matching::{
    cross_validate, fit_finite_batch, fit_lite, fit_lite_lowrank, model_objective, CvEstimator, CvResult,
    GradientModel, LowRankOptions,
};
use crate::targets::lognormal::linear_grid;
use crate::targets::{sample_matrix, TargetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Lite,
    Finite,
}

/// Fitting a surrogate to a fixed sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub estimator: Estimator,
    pub sigma: Tunable,
    pub lambda: Tunable,
    /// `min_points` is unused here; `finite_m` is replaced by `n_basis`.
    pub cv: CvSettings,
    /// Lite: points kept in the expansion (a uniform subsample when the
    /// data are larger). Finite: feature count `m`.
    pub n_basis: usize,
    pub lowrank_tol: Option<f64>,
    /// Target whose exact score is compared against the fit.
    pub reference: Option<TargetSpec>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            estimator: Estimator::Lite,
            sigma: Tunable::Cv,
            lambda: Tunable::Cv,
            cv: CvSettings { max_points: 2000, ..CvSettings::default() },
            n_basis: 500,
            lowrank_tol: None,
            reference: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: String,
    pub estimator: Estimator,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub lambda: f64,
    /// Training score matching objective of the fitted model.
    pub objective: f64,
    pub cv: Option<CvResult>,
    /// Mean squared gradient error against `reference`: on a 601-point grid
    /// over `[−3, 3]` in one dimension, else on 2000 reference draws.
    pub gradient_mse: Option<f64>,
}

pub struct FitOutcome {
    pub model: LoadedModel,
    pub report: FitReport,
}

impl FitOutcome {
    pub fn model_file(&self) -> ModelFile {
        match &self.model {
            LoadedModel::Lite(m) => ModelFile::Lite(LiteRecord::from_model(m)),
            LoadedModel::Finite(m) => ModelFile::Finite(m.to_record()),
        }
    }
}

pub fn fit_surrogate(data: &DMatrix<f64>, config: &FitConfig) -> Result<FitOutcome> {
    let (n, d) = (data.nrows(), data.ncols());
    if n < 2 || d == 0 {
        return Err(KmcError::invalid("fitting needs at least two points"));
    }
    if config.n_basis == 0 {
        return Err(KmcError::invalid("n_basis must be at least 1"));
    }
    let basis_seed = derive_seed(config.seed, 1);
    let cv = if config.sigma == Tunable::Cv || config.lambda == Tunable::Cv {
        let grid = |t: Tunable, g: &[f64]| t.value().map_or_else(|| g.to_vec(), |v| vec![v]);
        let sub = if n > config.cv.max_points {
            select_rows(data, &subset(n, config.cv.max_points, derive_seed(config.seed, 2)))
        } else {
            data.clone()
        };
        let estimator = match config.estimator {
            Estimator::Lite => CvEstimator::Lite,
            Estimator::Finite => CvEstimator::Finite { m: config.n_basis, basis_seed },
        };
        Some(cross_validate(
            &sub,
            &grid(config.sigma, &config.cv.sigma_grid),
            &grid(config.lambda, &config.cv.lambda_grid),
            config.cv.folds,
            estimator,
            derive_seed(config.seed, 3),
        )?)
    } else {
        None
    };
    let (sigma, lambda) = match &cv {
        Some(r) => r.one_se_choice(),
        None => (config.sigma.value().unwrap_or(1.0), config.lambda.value().unwrap_or(1.0)),
    };

    let model = match config.estimator {
        Estimator::Lite => {
            let z = if n > config.n_basis {
                select_rows(data, &subset(n, config.n_basis, derive_seed(config.seed, 4)))
            } else {
                data.clone()
            };
            LoadedModel::Lite(match config.lowrank_tol {
                Some(tol) => fit_lite_lowrank(&z, sigma, lambda, &LowRankOptions { chol_tol: tol, ..Default::default() })?,
                None => fit_lite(&z, sigma, lambda)?,
            })
        }
        Estimator::Finite => {
            let basis = sample_basis(&KernelSpec::gaussian(sigma)?, config.n_basis, d, basis_seed)?;
            LoadedModel::Finite(fit_finite_batch(data, &basis, lambda)?)
        }
    };
    let surrogate = model.as_gradient_model();
    let objective = model_objective(surrogate, data)?;
    let gradient_mse = match &config.reference {
        Some(spec) => Some(gradient_mse(surrogate, spec, derive_seed(config.seed, 5))?),
        None => None,
    };
    Ok(FitOutcome {
        report: FitReport {
            schema_version: crate::io::SUMMARY_SCHEMA.into(),
            estimator: config.estimator,
            n,
            d,
            sigma,
            lambda,
            objective,
            cv,
            gradient_mse,
        },
        model,
    })
}

fn subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(&mut rng_stream(seed, 0), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// See [`FitReport::gradient_mse`].
pub fn gradient_mse(model: &dyn GradientModel, reference: &TargetSpec, seed: u64) -> Result<f64> {
    let target = reference.build()?;
    crate::error::check_dim(target.dim(), model.dim())?;
    let points = if target.dim() == 1 {
        DMatrix::from_column_slice(601, 1, &linear_grid(-3.0, 3.0, 601))
    } else {
        sample_matrix(target.as_ref(), 2000, &mut rng_stream(seed, 0))?
    };
    let mut total = 0.0;
    for i in 0..points.nrows() {
        let x: Vec<f64> = points.row(i).iter().copied().collect();
        let exact = target
            .grad_log_density(&x)
            .ok_or_else(|| KmcError::invalid("reference target has no exact gradient"))?;
        let fitted = model.grad(&x);
        total += exact.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    }
    Ok(total / points.nrows() as f64)
}
