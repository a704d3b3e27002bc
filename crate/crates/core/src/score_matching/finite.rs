//! The finite estimator: `f(x) = θᵀφ(x)` on a random Fourier feature basis,
//! fitted on all absorbed points and updated online.
//!
//! State is kept at sum scale: `b = Σᵢ Σ_ℓ −φ̈ˡ(xᵢ)`, `C = Σᵢ Σ_ℓ φ̇ˡ(xᵢ) φ̇ˡ(xᵢ)ᵀ`
//! and the lower Cholesky factor of `C + λI`. The weights solve
//! `(C + λI) θ = b`, so on the averaged scale the ridge is `λ / t`. Absorbing a
//! point is `d` rank-one factor updates and two triangular solves, `O(d m²)`
//! whatever the number of points already absorbed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, KmcError, Result};
use crate::features::{BasisRecord, FeatureBasis};
use crate::linalg::{cholesky_lower, cholesky_rank_one_update, cholesky_solve, points_from_rows, rows_of};
use crate::score_matching::GradientModel;

pub const FINITE_MODEL_VERSION: &str = "kmc-finite-1";

/// Points per block when accumulating `C` in a batch fit.
const BATCH_BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteModel {
    basis: FeatureBasis,
    theta: DVector<f64>,
    b_sum: DVector<f64>,
    c_sum: DMatrix<f64>,
    chol: DMatrix<f64>,
    t: usize,
    lambda: f64,
    rebuilds: usize,
}

/// Outcome of absorbing one point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct UpdateReport {
    /// The rank-one updates broke down and the factor was recomputed.
    pub rebuilt: bool,
}

impl FiniteModel {
    /// The empty model: no data, factor `√λ I`, `θ = 0`.
    pub fn new(basis: FeatureBasis, lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        let m = basis.m();
        Ok(FiniteModel {
            theta: DVector::zeros(m),
            b_sum: DVector::zeros(m),
            c_sum: DMatrix::zeros(m, m),
            chol: DMatrix::from_diagonal_element(m, m, lambda.sqrt()),
            t: 0,
            lambda,
            rebuilds: 0,
            basis,
        })
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn b_sum(&self) -> &DVector<f64> {
        &self.b_sum
    }

    pub fn c_sum(&self) -> &DMatrix<f64> {
        &self.c_sum
    }

    /// Lower Cholesky factor of `C + λI` at sum scale.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Number of absorbed points.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// How many times a factor update broke down and was rebuilt.
    pub fn rebuild_count(&self) -> usize {
        self.rebuilds
    }

    /// Absorbs `x` with `d` rank-one updates of the factor.
    pub fn absorb(&mut self, x: &[f64]) -> Result<UpdateReport> {
        check_dim(self.basis.d(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KmcError::NonFinite { index: self.t, what: "absorbed point".into() });
        }
        let jac = self.basis.jacobian_unchecked(x);
        let phi = self.basis.phi(x)?;
        if jac.iter().chain(phi.iter()).any(|v| !v.is_finite()) {
            return Err(KmcError::NonFinite { index: self.t, what: "feature values".into() });
        }
        let mut rows: Vec<DVector<f64>> = (0..jac.nrows()).map(|l| jac.row(l).transpose()).collect();
        for v in &rows {
            self.c_sum.ger(1.0, v, v, 1.0);
        }
        self.b_sum += phi.component_mul(self.basis.omega_sq_norms());
        self.t += 1;

        let mut rebuilt = false;
        for v in rows.iter_mut() {
            if cholesky_rank_one_update(&mut self.chol, v.as_mut_slice()).is_err() {
                rebuilt = true;
                break;
            }
        }
        if rebuilt {
            self.rebuild_factor()?;
            self.rebuilds += 1;
        }
        self.resolve()?;
        Ok(UpdateReport { rebuilt })
    }

    /// Same data, different regularizer. Refactors in `O(m³)`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        let mut out = self.clone();
        out.lambda = lambda;
        out.rebuild_factor()?;
        out.resolve()?;
        Ok(out)
    }

    /// `½ θᵀ C̄ θ − θᵀ b̄` with the averaged statistics; equals the empirical
    /// score matching objective on the absorbed points.
    pub fn training_objective(&self) -> Option<f64> {
        if self.t == 0 {
            return None;
        }
        let t = self.t as f64;
        let quad = self.theta.dot(&(&self.c_sum * &self.theta));
        Some(0.5 * quad / t - self.theta.dot(&self.b_sum) / t)
    }

    fn rebuild_factor(&mut self) -> Result<()> {
        let m = self.basis.m();
        let mut a = self.c_sum.clone();
        for i in 0..m {
            a[(i, i)] += self.lambda;
        }
        self.chol = cholesky_lower(a)?;
        Ok(())
    }

    fn resolve(&mut self) -> Result<()> {
        let theta = cholesky_solve(&self.chol, &self.b_sum)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(KmcError::numeric("non-finite feature weights"));
        }
        self.theta = theta;
        Ok(())
    }

    pub fn to_record(&self) -> FiniteRecord {
        FiniteRecord {
            version: FINITE_MODEL_VERSION.to_string(),
            basis: self.basis.to_record(),
            theta: self.theta.iter().copied().collect(),
            b_sum: self.b_sum.iter().copied().collect(),
            c_sum: rows_of(&self.c_sum),
            cholesky: rows_of(&self.chol),
            t: self.t,
            lambda: self.lambda,
            rebuilds: self.rebuilds,
        }
    }

    pub fn from_record(rec: &FiniteRecord) -> Result<Self> {
        if rec.version != FINITE_MODEL_VERSION {
            return Err(KmcError::invalid(format!("unsupported finite model version {}", rec.version)));
        }
        check_positive("lambda", rec.lambda)?;
        let basis = FeatureBasis::from_record(&rec.basis)?;
        let m = basis.m();
        for len in [rec.theta.len(), rec.b_sum.len(), rec.c_sum.len(), rec.cholesky.len()] {
            check_dim(m, len)?;
        }
        let c_sum = points_from_rows(&rec.c_sum)?;
        let chol = points_from_rows(&rec.cholesky)?;
        check_dim(m, c_sum.ncols())?;
        check_dim(m, chol.ncols())?;
        Ok(FiniteModel {
            basis,
            theta: DVector::from_vec(rec.theta.clone()),
            b_sum: DVector::from_vec(rec.b_sum.clone()),
            c_sum,
            chol,
            t: rec.t,
            lambda: rec.lambda,
            rebuilds: rec.rebuilds,
        })
    }

    #[cfg(test)]
    pub(crate) fn corrupt_factor_for_test(&mut self) {
        self.chol[(0, 0)] = -1.0;
    }
}

/// Serialized finite model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteRecord {
    pub version: String,
    pub basis: BasisRecord,
    pub theta: Vec<f64>,
    pub b_sum: Vec<f64>,
    pub c_sum: Vec<Vec<f64>>,
    pub cholesky: Vec<Vec<f64>>,
    pub t: usize,
    pub lambda: f64,
    #[serde(default)]
    pub rebuilds: usize,
}

impl GradientModel for FiniteModel {
    fn dim(&self) -> usize {
        self.basis.d()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let a = (2.0 / self.basis.m() as f64).sqrt();
        self.basis.phases(x).iter().zip(self.theta.iter()).map(|(p, th)| a * p.cos() * th).sum()
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let a = (2.0 / self.basis.m() as f64).sqrt();
        let mut s = self.basis.phases(x);
        for (v, th) in s.iter_mut().zip(self.theta.iter()) {
            *v = -a * v.sin() * th;
        }
        let g = self.basis.omegas().tr_mul(&s);
        out.copy_from_slice(g.as_slice());
    }

    fn second_derivative(&self, x: &[f64], coord: usize) -> f64 {
        let a = (2.0 / self.basis.m() as f64).sqrt();
        let om = self.basis.omegas();
        self.basis
            .phases(x)
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let w = om[(j, coord)];
                -a * p.cos() * w * w * self.theta[j]
            })
            .sum()
    }
}

/// Batch fit on the rows of `x`. Produces the same state as absorbing the
/// rows one at a time into [`FiniteModel::new`].
pub fn fit_finite_batch(x: &DMatrix<f64>, basis: &FeatureBasis, lambda: f64) -> Result<FiniteModel> {
    check_positive("lambda", lambda)?;
    if x.nrows() == 0 {
        return Err(KmcError::invalid("batch fit needs at least one point"));
    }
    check_dim(basis.d(), x.ncols())?;
    let (t, m) = (x.nrows(), basis.m());
    let mut model = FiniteModel::new(basis.clone(), lambda)?;
    // Every Jacobian row factors as s_j(x)·ω_j with s_j = −a·sin(ω_j·x + u_j),
    // so Σ JᵀJ = (SᵀS) ∘ (ΩΩᵀ): one m×m product per block instead of d.
    let a = (2.0 / m as f64).sqrt();
    let mut sines = DMatrix::zeros(0, m);
    let mut sin_gram = DMatrix::<f64>::zeros(m, m);
    let mut start = 0;
    while start < t {
        let count = BATCH_BLOCK.min(t - start);
        if sines.nrows() != count {
            sines = DMatrix::zeros(count, m);
        }
        for k in 0..count {
            let i = start + k;
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(KmcError::NonFinite { index: i, what: "data point".into() });
            }
            let phases = basis.phases(&xi);
            let phi = phases.map(|p| a * p.cos());
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(KmcError::NonFinite { index: i, what: "feature values".into() });
            }
            for j in 0..m {
                sines[(k, j)] = -a * phases[j].sin();
            }
            model.b_sum += phi.component_mul(basis.omega_sq_norms());
        }
        sin_gram.gemm_tr(1.0, &sines, &sines, 1.0);
        start += count;
    }
    let omega_gram = basis.omegas() * basis.omegas().transpose();
    model.c_sum = sin_gram.component_mul(&omega_gram);
    model.t = t;
    model.rebuild_factor()?;
    model.resolve()?;
    Ok(model)
}

/// Functional form of [`FiniteModel::absorb`].
pub fn finite_update(mut model: FiniteModel, x_new: &[f64]) -> Result<FiniteModel> {
    model.absorb(x_new)?;
    Ok(model)
}

pub fn finite_grad(model: &FiniteModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.len())?;
    Ok(model.grad(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::sample_basis;
    use crate::kernels::KernelSpec;
    use crate::rng::rng_from_seed;
    use crate::score_matching::model_objective;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_points(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    fn basis(m: usize, d: usize, seed: u64) -> FeatureBasis {
        sample_basis(&KernelSpec::gaussian(1.5).unwrap(), m, d, seed).unwrap()
    }

    #[test]
    fn hand_expanded_two_feature_example() {
        let b = FeatureBasis::from_parts(
            KernelSpec::gaussian(1.0).unwrap(),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let m = fit_finite_batch(&DMatrix::from_element(1, 1, 0.0), &b, 1.0).unwrap();
        // sin(0) = 0 so C = 0, and b = φ(0) ⊙ ω² with φ(0) = (1, 1)
        assert_eq!(m.c_sum().amax(), 0.0);
        assert_abs_diff_eq!(m.b_sum()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b_sum()[1], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.theta()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.theta()[1], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn online_matches_batch() {
        let x = normal_points(5, 3, 1);
        let b = basis(40, 3, 2);
        let batch = fit_finite_batch(&x, &b, 0.1).unwrap();
        let mut online = FiniteModel::new(b, 0.1).unwrap();
        for i in 0..5 {
            let r = online.absorb(&crate::linalg::row_vec(&x, i)).unwrap();
            assert!(!r.rebuilt);
        }
        assert_eq!(online.t(), 5);
        assert!((online.theta() - batch.theta()).amax() <= 1e-8);
        assert!((online.c_sum() - batch.c_sum()).amax() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn insertion_order_does_not_matter(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(), seed in 0u64..1000) {
            let x = normal_points(8, 2, seed);
            let b = basis(30, 2, seed + 1);
            let batch = fit_finite_batch(&x, &b, 0.05).unwrap();
            let mut online = FiniteModel::new(b, 0.05).unwrap();
            for &i in &perm {
                online.absorb(&crate::linalg::row_vec(&x, i)).unwrap();
            }
            prop_assert!((online.theta() - batch.theta()).amax() <= 1e-8);
        }
    }

    #[test]
    fn duplicate_point_adds_the_same_term_again() {
        let b = basis(20, 2, 3);
        let x = [0.4, -0.7];
        let mut m = FiniteModel::new(b.clone(), 1.0).unwrap();
        m.absorb(&x).unwrap();
        let c1 = m.c_sum().clone();
        let b1 = m.b_sum().clone();
        m.absorb(&x).unwrap();
        assert!((m.c_sum() - &c1 * 2.0).amax() < 1e-14);
        assert!((m.b_sum() - &b1 * 2.0).amax() < 1e-14);
        let jac = b.feature_jacobian(&x).unwrap();
        assert!((&c1 - jac.transpose() * &jac).amax() < 1e-14);
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let x = normal_points(50, 2, 4);
        let m = fit_finite_batch(&x, &basis(30, 2, 5), 1e9).unwrap();
        assert!(m.theta().norm() <= m.b_sum().norm() / 1e9);
    }

    #[test]
    fn weight_norm_shrinks_with_lambda() {
        let x = normal_points(100, 2, 6);
        let m = fit_finite_batch(&x, &basis(40, 2, 7), 1e-6).unwrap();
        let norms: Vec<f64> = [1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4]
            .iter()
            .map(|&l| m.with_lambda(l).unwrap().theta().norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
    }

    #[test]
    fn c_is_positive_semidefinite() {
        let x = normal_points(10, 2, 8);
        let m = fit_finite_batch(&x, &basis(60, 2, 9), 1.0).unwrap();
        let eig = m.c_sum().clone().symmetric_eigenvalues();
        let scale = m.c_sum().amax().max(1.0);
        assert!(eig.iter().all(|&e| e >= -60.0 * f64::EPSILON * scale));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = normal_points(200, 3, 10);
        let m = fit_finite_batch(&x, &basis(50, 3, 11), 1e-2).unwrap();
        let mut rng = rng_from_seed(12);
        for _ in 0..10 {
            let q: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let g = finite_grad(&m, &q).unwrap();
            let jac_g = m.basis().feature_jacobian(&q).unwrap() * m.theta();
            for l in 0..3 {
                assert_abs_diff_eq!(g[l], jac_g[l], epsilon = 1e-10 * (1.0 + g[l].abs()));
                let h = 1e-5;
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[l] += h;
                qm[l] -= h;
                let fd = (m.log_density(&qp) - m.log_density(&qm)) / (2.0 * h);
                assert!((fd - g[l]).abs() <= 1e-6 * (1.0 + g[l].abs()));
                let direct = m.theta().dot(&m.basis().phi(&q).unwrap());
                assert_abs_diff_eq!(direct, m.log_density(&q), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn zero_weights_and_scalar_closed_form() {
        let m = FiniteModel::new(basis(10, 2, 13), 1.0).unwrap();
        assert_eq!(finite_grad(&m, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);

        let b = FeatureBasis::from_parts(
            KernelSpec::gaussian(1.0).unwrap(),
            DMatrix::from_element(1, 1, 1.3),
            DVector::from_element(1, 0.4),
        )
        .unwrap();
        let mut m1 = FiniteModel::new(b, 0.5).unwrap();
        m1.absorb(&[0.2]).unwrap();
        let th = m1.theta()[0];
        let x: f64 = 0.9;
        let expected = th * (-(2.0f64).sqrt() * (1.3 * x + 0.4).sin() * 1.3);
        assert_abs_diff_eq!(finite_grad(&m1, &[x]).unwrap()[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn training_objective_matches_score_objective() {
        let x = normal_points(30, 2, 14);
        let m = fit_finite_batch(&x, &basis(25, 2, 15), 1e-3).unwrap();
        let direct = model_objective(&m, &x).unwrap();
        let from_stats = m.training_objective().unwrap();
        assert!((direct - from_stats).abs() <= 1e-9 * (1.0 + direct.abs()));
        assert!(direct <= 0.0);
    }

    #[test]
    fn broken_factor_is_rebuilt_and_flagged() {
        let x = normal_points(6, 2, 16);
        let b = basis(20, 2, 17);
        let mut m = fit_finite_batch(&x.rows(0, 5).clone_owned(), &b, 0.1).unwrap();
        m.corrupt_factor_for_test();
        let r = m.absorb(&crate::linalg::row_vec(&x, 5)).unwrap();
        assert!(r.rebuilt);
        assert_eq!(m.rebuild_count(), 1);
        let batch = fit_finite_batch(&x, &b, 0.1).unwrap();
        assert!((m.theta() - batch.theta()).amax() <= 1e-8);
    }

    #[test]
    fn non_finite_points_are_rejected_without_side_effects() {
        let mut m = FiniteModel::new(basis(10, 2, 18), 1.0).unwrap();
        let before = m.clone();
        assert!(m.absorb(&[f64::NAN, 0.0]).is_err());
        assert_eq!(m, before);
        assert!(m.absorb(&[0.0]).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, f64::INFINITY, 0.0]);
        assert!(matches!(
            fit_finite_batch(&bad, &basis(10, 2, 18), 1.0),
            Err(KmcError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn record_round_trip_is_lossless() {
        let x = normal_points(20, 2, 19);
        let m = fit_finite_batch(&x, &basis(15, 2, 20), 0.3).unwrap();
        let json = serde_json::to_string(&m.to_record()).unwrap();
        let back = FiniteModel::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(m, back);
        let mut rec = m.to_record();
        rec.version = "other".into();
        assert!(FiniteModel::from_record(&rec).is_err());
    }
}
