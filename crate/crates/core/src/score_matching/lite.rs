//! The lite estimator: `f(x) = Σᵢ αᵢ k(zᵢ, x)` on a sub-sample `z` with a
//! Gaussian kernel, fitted in closed form.
//!
//! With `A_ℓ[i, j] = K_ij (z_iℓ − z_jℓ)` the quadratic term of the objective is
//! `C = Σ_ℓ A_ℓᵀ A_ℓ`, which is the commutator product written with the
//! antisymmetry of `A_ℓ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_positive, KmcError, Result};
use crate::kernels::{gram_matrix, incomplete_cholesky, KernelSpec};
use crate::linalg::{cholesky_lower, cholesky_solve, conjugate_gradient, CgReport};
use crate::score_matching::GradientModel;

#[derive(Clone, Debug, PartialEq)]
pub struct LiteModel {
    /// `n × d`, one basis point per row.
    basis: DMatrix<f64>,
    /// Row-major copy of `basis` for fast evaluation.
    flat: Vec<f64>,
    alpha: DVector<f64>,
    spec: KernelSpec,
    lambda: f64,
    solve_report: Option<CgReport>,
}

impl LiteModel {
    pub fn from_parts(basis: DMatrix<f64>, alpha: DVector<f64>, sigma: f64, lambda: f64) -> Result<Self> {
        check_dim(basis.nrows(), alpha.len())?;
        check_positive("lambda", lambda)?;
        let spec = KernelSpec::gaussian(sigma)?;
        let flat = basis.transpose().as_slice().to_vec();
        Ok(LiteModel { basis, flat, alpha, spec, lambda, solve_report: None })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// Conjugate-gradient report for models fitted on the low-rank path.
    pub fn solve_report(&self) -> Option<&CgReport> {
        self.solve_report.as_ref()
    }

    fn point(&self, i: usize) -> &[f64] {
        let d = self.basis.ncols();
        &self.flat[i * d..(i + 1) * d]
    }
}

impl GradientModel for LiteModel {
    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (0..self.n())
            .map(|i| self.alpha[i] * self.spec.profile(crate::linalg::sq_dist(x, self.point(i))))
            .sum()
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let scale = -2.0 / self.spec.sigma;
        for i in 0..self.n() {
            let z = self.point(i);
            let k = self.spec.profile(crate::linalg::sq_dist(x, z));
            let c = scale * self.alpha[i] * k;
            if c == 0.0 {
                continue;
            }
            for ((o, xv), zv) in out.iter_mut().zip(x).zip(z) {
                *o += c * (xv - zv);
            }
        }
    }

    fn second_derivative(&self, x: &[f64], coord: usize) -> f64 {
        let s = self.spec.sigma;
        (0..self.n())
            .map(|i| {
                let z = self.point(i);
                let k = self.spec.profile(crate::linalg::sq_dist(x, z));
                let diff = x[coord] - z[coord];
                self.alpha[i] * k * ((2.0 / s).powi(2) * diff * diff - 2.0 / s)
            })
            .sum()
    }
}

pub fn lite_grad(model: &LiteModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.len())?;
    Ok(model.grad(x))
}

pub fn lite_log_density(model: &LiteModel, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    Ok(model.log_density(x))
}

/// The linear system `(C + λI) α = −(σ/2) b` minus its regularizer.
#[derive(Clone, Debug)]
pub struct LiteSystem {
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: f64,
}

impl LiteSystem {
    pub fn build(z: &DMatrix<f64>, sigma: f64) -> Result<Self> {
        let spec = KernelSpec::gaussian(sigma)?;
        let (n, d) = (z.nrows(), z.ncols());
        let k = gram_matrix(&spec, z);
        let k1 = DVector::from_fn(n, |i, _| k.row(i).sum());
        let mut b = DVector::zeros(n);
        let mut c = DMatrix::zeros(n, n);
        let mut a = DMatrix::zeros(n, n);
        for l in 0..d {
            let x = z.column(l).clone_owned();
            let s = x.component_mul(&x);
            let ks = &k * &s;
            let kx = &k * &x;
            let term = (ks + s.component_mul(&k1) - x.component_mul(&kx) * 2.0) * (2.0 / sigma) - &k1;
            b += term;
            for j in 0..n {
                for i in 0..n {
                    a[(i, j)] = k[(i, j)] * (x[i] - x[j]);
                }
            }
            c.gemm_tr(1.0, &a, &a, 1.0);
        }
        symmetrize(&mut c);
        if c.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(KmcError::numeric("non-finite entries in the lite system"));
        }
        Ok(LiteSystem { c, b, sigma })
    }

    pub fn solve(&self, lambda: f64) -> Result<DVector<f64>> {
        let n = self.b.len();
        let mut m = self.c.clone();
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        let l = cholesky_lower(m)?;
        cholesky_solve(&l, &(&self.b * (-self.sigma / 2.0)))
    }
}

fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}

fn validate(z: &DMatrix<f64>, sigma: f64, lambda: f64) -> Result<()> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(KmcError::invalid("lite fit needs at least one point of positive dimension"));
    }
    check_positive("sigma", sigma)?;
    check_positive("lambda", lambda)?;
    if let Some(i) = (0..z.nrows()).find(|&i| z.row(i).iter().any(|v| !v.is_finite())) {
        return Err(KmcError::NonFinite { index: i, what: "basis point".into() });
    }
    Ok(())
}

/// Dense fit: builds `C` and `b` and solves by Cholesky in `O(d n³)`.
pub fn fit_lite(z: &DMatrix<f64>, sigma: f64, lambda: f64) -> Result<LiteModel> {
    validate(z, sigma, lambda)?;
    let alpha = LiteSystem::build(z, sigma)?.solve(lambda)?;
    LiteModel::from_parts(z.clone(), alpha, sigma, lambda)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankOptions {
    /// Incomplete Cholesky cut-off on the remaining kernel diagonal.
    pub chol_tol: f64,
    /// Relative residual at which conjugate gradients stops.
    pub cg_tol: f64,
    pub max_iters: usize,
    /// Initial iterate, e.g. the previous solution.
    pub initial: Option<DVector<f64>>,
}

impl Default for LowRankOptions {
    fn default() -> Self {
        LowRankOptions { chol_tol: 1e-8, cg_tol: 1e-10, max_iters: 1000, initial: None }
    }
}

/// Fit through `K ≈ L Lᵀ` and conjugate gradients. Neither `K` nor `C` is
/// formed; each operator application costs `O(d n ℓ)`.
///
/// An exhausted iteration budget is not an error: the best iterate is
/// returned and [`LiteModel::solve_report`] carries `converged = false`.
pub fn fit_lite_lowrank(
    z: &DMatrix<f64>,
    sigma: f64,
    lambda: f64,
    opts: &LowRankOptions,
) -> Result<LiteModel> {
    validate(z, sigma, lambda)?;
    let spec = KernelSpec::gaussian(sigma)?;
    let factor = incomplete_cholesky(&spec, z, opts.chol_tol)?;
    let l = &factor.l;
    let (n, d) = (z.nrows(), z.ncols());
    if let Some(x0) = &opts.initial {
        check_dim(n, x0.len())?;
    }
    let kmul = |v: &DVector<f64>| -> DVector<f64> { l * l.tr_mul(v) };
    let cols: Vec<DVector<f64>> = (0..d).map(|c| z.column(c).clone_owned()).collect();

    let k1 = kmul(&DVector::from_element(n, 1.0));
    let mut b = DVector::zeros(n);
    for x in &cols {
        let s = x.component_mul(x);
        let term = (kmul(&s) + s.component_mul(&k1) - x.component_mul(&kmul(x)) * 2.0) * (2.0 / sigma) - &k1;
        b += term;
    }
    let rhs = b * (-sigma / 2.0);

    // A_ℓ v = x ⊙ (K v) − K (x ⊙ v), and C v = −Σ_ℓ A_ℓ (A_ℓ v)
    let apply_a = |x: &DVector<f64>, v: &DVector<f64>| x.component_mul(&kmul(v)) - kmul(&x.component_mul(v));
    let apply = |v: &DVector<f64>| {
        let mut out = v * lambda;
        for x in &cols {
            let av = apply_a(x, v);
            out -= apply_a(x, &av);
        }
        out
    };
    let (alpha, report) = conjugate_gradient(apply, &rhs, opts.initial.as_ref(), opts.cg_tol, opts.max_iters);
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(KmcError::numeric("conjugate gradients produced non-finite coefficients"));
    }
    let mut model = LiteModel::from_parts(z.clone(), alpha, sigma, lambda)?;
    model.solve_report = Some(report);
    Ok(model)
}
