//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Point sets are `n × d` matrices with one point per row.

use nalgebra::{DMatrix, DVector};

use crate::error::{KmcError, Result};

/// Builds an `n × d` point matrix from row vectors.
pub fn points_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(KmcError::invalid(format!(
                "row {i} has {} columns, expected {d}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn row_vec(points: &DMatrix<f64>, i: usize) -> Vec<f64> {
    points.row(i).iter().copied().collect()
}

pub fn rows_of(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..points.nrows()).map(|i| row_vec(points, i)).collect()
}

/// Selects the given rows into a new matrix.
pub fn select_rows(points: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), points.ncols(), |i, j| points[(idx[i], j)])
}

pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// In-place rank-one update of a lower Cholesky factor: on return
/// `L Lᵀ` equals the old `L Lᵀ + v vᵀ`. `v` is overwritten.
///
/// Costs `O(m²)`. Returns an error if a pivot becomes non-finite or
/// non-positive, in which case `l` is left partially modified.
pub fn cholesky_rank_one_update(l: &mut DMatrix<f64>, v: &mut [f64]) -> Result<()> {
    let m = l.nrows();
    debug_assert_eq!(l.ncols(), m);
    debug_assert_eq!(v.len(), m);
    for k in 0..m {
        let lkk = l[(k, k)];
        let vk = v[k];
        if vk == 0.0 {
            continue;
        }
        let r = lkk.hypot(vk);
        if !(r.is_finite() && r > 0.0 && lkk > 0.0) {
            return Err(KmcError::numeric(format!(
                "cholesky update broke down at pivot {k}"
            )));
        }
        let c = r / lkk;
        let s = vk / lkk;
        l[(k, k)] = r;
        let mut col = l.column_mut(k);
        for i in (k + 1)..m {
            let lik = (col[i] + s * v[i]) / c;
            v[i] = c * v[i] - s * lik;
            col[i] = lik;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` for a lower-triangular `L` by two triangular solves.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = l
        .solve_lower_triangular(b)
        .ok_or_else(|| KmcError::numeric("singular triangular factor"))?;
    l.tr_solve_lower_triangular(&y)
        .ok_or_else(|| KmcError::numeric("singular triangular factor"))
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(a)
        .map(|c| c.unpack())
        .ok_or_else(|| KmcError::numeric("matrix is not numerically positive definite"))
}

/// Outcome of a conjugate-gradient solve.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub rhs_norm: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive-definite operator.
///
/// Stops when `‖r‖ ≤ tol · ‖rhs‖` or after `max_iters` iterations. The
/// returned iterate is the one with the smallest residual seen.
pub fn conjugate_gradient<F>(
    mut apply: F,
    rhs: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    tol: f64,
    max_iters: usize,
) -> (DVector<f64>, CgReport)
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = rhs.len();
    let rhs_norm = rhs.norm();
    let mut x = match x0 {
        Some(x0) if max_iters > 0 => x0.clone(),
        _ => DVector::zeros(n),
    };
    let mut r = if x.iter().any(|v| *v != 0.0) {
        rhs - apply(&x)
    } else {
        rhs.clone()
    };
    let mut best = x.clone();
    let mut best_res = r.norm();
    let threshold = tol * rhs_norm;
    if best_res <= threshold || max_iters == 0 {
        let converged = best_res <= threshold;
        return (
            best,
            CgReport { iterations: 0, residual_norm: best_res, rhs_norm, converged },
        );
    }
    let mut p = r.clone();
    let mut rs_old = r.dot(&r);
    let mut iterations = 0;
    for it in 0..max_iters {
        iterations = it + 1;
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rs_old / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rs_new = r.dot(&r);
        let res = rs_new.sqrt();
        if res < best_res {
            best_res = res;
            best.copy_from(&x);
        }
        if res <= threshold {
            break;
        }
        p = &r + &p * (rs_new / rs_old);
        rs_old = rs_new;
    }
    (
        best,
        CgReport {
            iterations,
            residual_norm: best_res,
            rhs_norm,
            converged: best_res <= threshold,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd(m: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        a.transpose() * &a + DMatrix::identity(m, m)
    }

    #[test]
    fn rank_one_update_matches_refactorization() {
        let a = spd(6);
        let mut l = cholesky_lower(a.clone()).unwrap();
        let v = vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.5];
        let vv = DVector::from_vec(v.clone());
        let mut scratch = v.clone();
        cholesky_rank_one_update(&mut l, &mut scratch).unwrap();
        let expected = a + &vv * vv.transpose();
        assert_abs_diff_eq!(&l * l.transpose(), expected, epsilon = 1e-9);
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cg_solves_spd_system_and_reports_zero_budget() {
        let a = spd(5);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let (x, rep) = conjugate_gradient(|v| &a * v, &b, None, 1e-12, 100);
        assert!(rep.converged);
        assert_abs_diff_eq!(&a * &x, b.clone(), epsilon = 1e-9);

        let (x0, rep0) = conjugate_gradient(|v| &a * v, &b, None, 1e-12, 0);
        assert!(!rep0.converged);
        assert_eq!(x0, DVector::zeros(5));
        assert_abs_diff_eq!(rep0.residual_norm, b.norm(), epsilon = 1e-15);
    }

    #[test]
    fn cg_warm_start_at_solution_stops_immediately() {
        let a = spd(4);
        let b = DVector::from_vec(vec![1.0, 0.0, -1.0, 2.0]);
        let x = a.clone().cholesky().unwrap().solve(&b);
        let (_, rep) = conjugate_gradient(|v| &a * v, &b, Some(&x), 1e-8, 50);
        assert!(rep.converged);
        assert!(rep.iterations <= 1);
    }
}
