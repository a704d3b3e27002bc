//! Grid cross-validation of the kernel bandwidth and ridge parameter.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, KmcError, Result};
use crate::features::sample_basis;
use crate::kernels::KernelSpec;
use crate::linalg::select_rows;
use crate::rng::rng_from_seed;
use crate::score_matching::finite::fit_finite_batch;
use crate::score_matching::lite::{LiteModel, LiteSystem};
use crate::score_matching::model_pointwise;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CvEstimator {
    Lite,
    /// Gaussian random features; one basis per bandwidth drawn from `basis_seed`.
    Finite { m: usize, basis_seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub sigma: f64,
    pub lambda: f64,
    pub sigma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// `scores[i][j]`: mean held-out objective at `(sigma_grid[i], lambda_grid[j])`.
    /// Failed fits score `+∞`.
    pub scores: Vec<Vec<f64>>,
    /// Standard error of each mean score from the pooled held-out terms.
    pub std_errors: Vec<Vec<f64>>,
    pub folds: usize,
}

impl CvResult {
    pub fn best_score(&self) -> f64 {
        self.scores.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// One-standard-error rule: among grid points scoring within one standard
    /// error of the minimum, the most regularized one, meaning the largest
    /// `σ` and then the largest `λ`.
    pub fn one_se_choice(&self) -> (f64, f64) {
        let (bi, bj) = self.selected_index();
        let limit = self.scores[bi][bj] + self.std_errors[bi][bj];
        let mut pick = (bi, bj);
        for i in 0..self.sigma_grid.len() {
            for j in 0..self.lambda_grid.len() {
                if self.scores[i][j] > limit {
                    continue;
                }
                let (s, l) = (self.sigma_grid[i], self.lambda_grid[j]);
                let (ps, pl) = (self.sigma_grid[pick.0], self.lambda_grid[pick.1]);
                if s > ps || (s == ps && l > pl) {
                    pick = (i, j);
                }
            }
        }
        (self.sigma_grid[pick.0], self.lambda_grid[pick.1])
    }

    fn selected_index(&self) -> (usize, usize) {
        let i = self.sigma_grid.iter().position(|&s| s == self.sigma).unwrap_or(0);
        let j = self.lambda_grid.iter().position(|&l| l == self.lambda).unwrap_or(0);
        (i, j)
    }
}

/// `count` logarithmically spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    // integer powers of the ratio keep decade and octave grids exact
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    let ratio = if (ratio - ratio.round()).abs() < 1e-12 { ratio.round() } else { ratio };
    (0..count).map(|i| if i + 1 == count { hi } else { lo * ratio.powi(i as i32) }).collect()
}

/// `folds`-fold cross-validation of the score matching objective.
///
/// Folds come from a seeded permutation. The minimum mean held-out score
/// wins; exact ties go to the larger `λ`, then to the smaller `σ`.
pub fn cross_validate(
    data: &DMatrix<f64>,
    sigma_grid: &[f64],
    lambda_grid: &[f64],
    folds: usize,
    estimator: CvEstimator,
    seed: u64,
) -> Result<CvResult> {
    if sigma_grid.is_empty() || lambda_grid.is_empty() {
        return Err(KmcError::invalid("cross-validation grids must be nonempty"));
    }
    for &v in sigma_grid {
        check_positive("sigma grid value", v)?;
    }
    for &v in lambda_grid {
        check_positive("lambda grid value", v)?;
    }
    if folds < 2 {
        return Err(KmcError::invalid("cross-validation needs at least two folds"));
    }
    let n = data.nrows();
    if n < folds {
        return Err(KmcError::invalid(format!("{n} points cannot fill {folds} folds")));
    }
    if let CvEstimator::Finite { m: 0, .. } = estimator {
        return Err(KmcError::invalid("feature count must be at least 1"));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let splits: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..folds)
        .map(|k| {
            let test: Vec<usize> = perm.iter().enumerate().filter(|(i, _)| i % folds == k).map(|(_, &p)| p).collect();
            let train: Vec<usize> = perm.iter().enumerate().filter(|(i, _)| i % folds != k).map(|(_, &p)| p).collect();
            (select_rows(data, &train), select_rows(data, &test))
        })
        .collect();

    let mut scores = vec![vec![0.0; lambda_grid.len()]; sigma_grid.len()];
    let mut sums = vec![vec![(0.0, 0.0); lambda_grid.len()]; sigma_grid.len()];
    for (si, &sigma) in sigma_grid.iter().enumerate() {
        let basis = match estimator {
            CvEstimator::Lite => None,
            CvEstimator::Finite { m, basis_seed } => {
                Some(sample_basis(&KernelSpec::gaussian(sigma)?, m, data.ncols(), basis_seed)?)
            }
        };
        for (train, test) in &splits {
            let fold_terms: Vec<Option<Vec<f64>>> = match &basis {
                None => match LiteSystem::build(train, sigma) {
                    Ok(sys) => lambda_grid
                        .iter()
                        .map(|&lambda| {
                            sys.solve(lambda)
                                .and_then(|alpha| LiteModel::from_parts(train.clone(), alpha, sigma, lambda))
                                .and_then(|m| model_pointwise(&m, test))
                                .ok()
                        })
                        .collect(),
                    Err(_) => vec![None; lambda_grid.len()],
                },
                Some(basis) => match fit_finite_batch(train, basis, lambda_grid[0]) {
                    Ok(base) => lambda_grid
                        .iter()
                        .map(|&lambda| base.with_lambda(lambda).and_then(|m| model_pointwise(&m, test)).ok())
                        .collect(),
                    Err(_) => vec![None; lambda_grid.len()],
                },
            };
            for (j, terms) in fold_terms.into_iter().enumerate() {
                match terms {
                    Some(t) => {
                        let mean = t.iter().sum::<f64>() / t.len() as f64;
                        scores[si][j] += mean / folds as f64;
                        sums[si][j].0 += t.iter().sum::<f64>();
                        sums[si][j].1 += t.iter().map(|v| v * v).sum::<f64>();
                    }
                    None => scores[si][j] = f64::INFINITY,
                }
            }
        }
    }
    let nf = n as f64;
    let std_errors: Vec<Vec<f64>> = sums
        .iter()
        .zip(&scores)
        .map(|(row, srow)| {
            row.iter()
                .zip(srow)
                .map(|(&(s, s2), sc)| {
                    if !sc.is_finite() {
                        return f64::INFINITY;
                    }
                    let mean = s / nf;
                    let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
                    (var / nf).sqrt()
                })
                .collect()
        })
        .collect();

    let mut best = (0, 0);
    for si in 0..sigma_grid.len() {
        for lj in 0..lambda_grid.len() {
            if better(
                (scores[si][lj], lambda_grid[lj], sigma_grid[si]),
                (scores[best.0][best.1], lambda_grid[best.1], sigma_grid[best.0]),
            ) {
                best = (si, lj);
            }
        }
    }
    Ok(CvResult {
        sigma: sigma_grid[best.0],
        lambda: lambda_grid[best.1],
        sigma_grid: sigma_grid.to_vec(),
        lambda_grid: lambda_grid.to_vec(),
        scores,
        std_errors,
        folds,
    })
}

/// Is `(score, lambda, sigma)` preferred over the incumbent?
fn better(cand: (f64, f64, f64), inc: (f64, f64, f64)) -> bool {
    if cand.0 != inc.0 {
        return cand.0 < inc.0;
    }
    if cand.1 != inc.1 {
        return cand.1 > inc.1;
    }
    cand.2 < inc.2
}
