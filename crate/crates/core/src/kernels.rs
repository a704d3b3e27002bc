//! Translation-invariant kernels, their gradients, Gram matrices and a
//! pivoted incomplete Cholesky factorization.
//!
//! Both families are written in terms of the squared distance `r² = ‖x−y‖²`:
//!
//! * Gaussian: `k(r) = exp(−r²/σ)`
//! * rational quadratic: `k(r) = (1 + r²/(α·σ))^(−α)`, which tends to the
//!   Gaussian with the same `σ` as `α → ∞`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, KmcError, Result};
use crate::linalg::sq_dist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    RationalQuadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: f64,
    /// Shape of the rational-quadratic kernel; ignored for the Gaussian.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::Gaussian, sigma, alpha: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rational_quadratic(sigma: f64, alpha: f64) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::RationalQuadratic, sigma, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("sigma", self.sigma)?;
        if self.family == KernelFamily::RationalQuadratic {
            check_positive("alpha", self.alpha)?;
        }
        Ok(())
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn profile(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-r2 / self.sigma).exp(),
            KernelFamily::RationalQuadratic => {
                (1.0 + r2 / (self.alpha * self.sigma)).powf(-self.alpha)
            }
        }
    }

    /// `dk/d(r²)`.
    #[inline]
    pub fn profile_derivative(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => -(-r2 / self.sigma).exp() / self.sigma,
            KernelFamily::RationalQuadratic => {
                -(1.0 + r2 / (self.alpha * self.sigma)).powf(-self.alpha - 1.0) / self.sigma
            }
        }
    }

    /// Unchecked evaluation; lengths must agree.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        self.profile(sq_dist(x, y))
    }

    /// Unchecked `∇ₓ k(x, y)` written into `out`.
    pub fn grad_x_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let g = 2.0 * self.profile_derivative(sq_dist(x, y));
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = g * (a - b);
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok(spec.eval(x, y))
}

pub fn kernel_grad_x(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), y.len())?;
    let mut out = vec![0.0; x.len()];
    spec.grad_x_into(x, y, &mut out);
    Ok(out)
}

/// Gram matrix between the rows of `x` (n × d) and `z` (m × d).
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(x.ncols(), z.ncols())?;
    let (n, m, d) = (x.nrows(), z.nrows(), x.ncols());
    let mut sq = DMatrix::<f64>::zeros(n, m);
    for l in 0..d {
        let xc = x.column(l);
        let zc = z.column(l);
        for j in 0..m {
            let zj = zc[j];
            let mut col = sq.column_mut(j);
            for i in 0..n {
                let diff = xc[i] - zj;
                col[i] += diff * diff;
            }
        }
    }
    sq.apply(|v| *v = spec.profile(*v));
    Ok(sq)
}

/// Symmetric Gram matrix of a single point set.
pub fn gram_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = kernel_matrix(spec, x, x).expect("same point set");
    // exact symmetry and unit diagonal regardless of rounding in the distance sums
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] = spec.profile(0.0);
        for j in 0..i {
            let v = k[(i, j)];
            k[(j, i)] = v;
        }
    }
    k
}

/// `K ≈ L Lᵀ` with `L` of size `n × ℓ`.
#[derive(Clone, Debug)]
pub struct LowRankFactor {
    pub l: DMatrix<f64>,
    pub tol: f64,
    /// Pivot order used to build the columns of `l`.
    pub pivots: Vec<usize>,
    /// Largest remaining diagonal entry of `K − L Lᵀ`. Since the residual is
    /// positive semidefinite this bounds every entry of it in absolute value.
    pub residual_bound: f64,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }
}

/// Pivoted incomplete Cholesky factorization of the Gram matrix of `x`.
///
/// Greedily picks the largest remaining diagonal entry and stops once it
/// falls to `tol` or below, so `max_ij |K − L Lᵀ|_ij ≤ tol` on return.
pub fn incomplete_cholesky(spec: &KernelSpec, x: &DMatrix<f64>, tol: f64) -> Result<LowRankFactor> {
    if !(tol > 0.0) {
        return Err(KmcError::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = crate::linalg::rows_of(x);
    let mut diag: Vec<f64> = rows.iter().map(|r| spec.eval(r, r)).collect();
    if let Some(i) = diag.iter().position(|v| !v.is_finite()) {
        return Err(KmcError::NonFinite { index: i, what: "kernel diagonal".into() });
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut is_pivot = vec![false; n];
    loop {
        let (piv, &dmax) = match diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_pivot[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            Some(p) => p,
            None => break,
        };
        if dmax <= tol || columns.len() == n {
            break;
        }
        let nu = dmax.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if is_pivot[i] {
                continue;
            }
            let mut v = spec.eval(&rows[i], &rows[piv]);
            for c in &columns {
                v -= c[i] * c[piv];
            }
            if !v.is_finite() {
                return Err(KmcError::NonFinite { index: i, what: "kernel value".into() });
            }
            col[i] = v / nu;
        }
        col[piv] = nu;
        for i in 0..n {
            if !is_pivot[i] && i != piv {
                diag[i] -= col[i] * col[i];
            }
        }
        diag[piv] = 0.0;
        is_pivot[piv] = true;
        pivots.push(piv);
        columns.push(col);
    }
    let residual_bound = diag
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_pivot[*i])
        .map(|(_, v)| v.max(0.0))
        .fold(0.0, f64::max);
    let l = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    Ok(LowRankFactor { l, tol, pivots, residual_bound })
}
