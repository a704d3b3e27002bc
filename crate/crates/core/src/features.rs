//! Random Fourier feature bases and their coordinate derivatives.
//!
//! `φ(x)_j = √(2/m) cos(ω_jᵀx + u_j)` with `u_j ~ Uniform[0, 2π)` and the
//! frequencies drawn from the spectral measure of the kernel:
//!
//! * Gaussian `exp(−‖δ‖²/σ)`: `ω ~ N(0, (2/σ) I)`.
//! * rational quadratic: a Gamma scale mixture, `τ ~ Gamma(α, rate = α σ / 2)`
//!   followed by `ω ~ N(0, τ I)`.
//!
//! Sampling order for a seeded basis: for each feature `j` in turn, the
//! mixing precision (RQ only) then the `d` frequency coordinates; after all
//! frequencies, the `m` phases.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KmcError, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBasis {
    spec: KernelSpec,
    /// `m × d`, one frequency per row.
    omegas: DMatrix<f64>,
    offsets: DVector<f64>,
    /// `Σ_ℓ ω_jℓ²` per feature, cached for the Laplacian terms.
    omega_sq_norms: DVector<f64>,
    seed: Option<u64>,
}

pub fn sample_basis(spec: &KernelSpec, m: usize, d: usize, seed: u64) -> Result<FeatureBasis> {
    spec.validate()?;
    if m == 0 || d == 0 {
        return Err(KmcError::invalid("feature count and dimension must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut omegas = DMatrix::zeros(m, d);
    match spec.family {
        KernelFamily::Gaussian => {
            let scale = (2.0 / spec.sigma).sqrt();
            for j in 0..m {
                for l in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    omegas[(j, l)] = scale * z;
                }
            }
        }
        KernelFamily::RationalQuadratic => {
            let rate = spec.alpha * spec.sigma / 2.0;
            let gamma = Gamma::new(spec.alpha, 1.0 / rate)
                .map_err(|e| KmcError::invalid(format!("gamma mixing law: {e}")))?;
            for j in 0..m {
                let tau: f64 = gamma.sample(&mut rng);
                let scale = tau.sqrt();
                for l in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    omegas[(j, l)] = scale * z;
                }
            }
        }
    }
    let offsets = DVector::from_fn(m, |_, _| rng.random_range(0.0..2.0 * PI));
    let mut basis = FeatureBasis::from_parts(*spec, omegas, offsets)?;
    basis.seed = Some(seed);
    Ok(basis)
}

impl FeatureBasis {
    /// A basis with explicit frequencies (`m × d`) and phases.
    pub fn from_parts(spec: KernelSpec, omegas: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        check_dim(omegas.nrows(), offsets.len())?;
        if omegas.nrows() == 0 || omegas.ncols() == 0 {
            return Err(KmcError::invalid("empty feature basis"));
        }
        if offsets.iter().any(|u| !(0.0..2.0 * PI).contains(u)) {
            return Err(KmcError::invalid("feature phases must lie in [0, 2π)"));
        }
        if omegas.iter().any(|w| !w.is_finite()) {
            return Err(KmcError::NonFinite { index: 0, what: "frequency".into() });
        }
        let omega_sq_norms = DVector::from_fn(omegas.nrows(), |j, _| omegas.row(j).norm_squared());
        Ok(FeatureBasis { spec, omegas, offsets, omega_sq_norms, seed: None })
    }

    pub fn m(&self) -> usize {
        self.omegas.nrows()
    }

    pub fn d(&self) -> usize {
        self.omegas.ncols()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn omegas(&self) -> &DMatrix<f64> {
        &self.omegas
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub(crate) fn omega_sq_norms(&self) -> &DVector<f64> {
        &self.omega_sq_norms
    }

    fn amplitude(&self) -> f64 {
        (2.0 / self.m() as f64).sqrt()
    }

    /// Phases `ω_jᵀx + u_j`.
    pub(crate) fn phases(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        &self.omegas * xv + &self.offsets
    }

    pub fn phi(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.d(), x.len())?;
        let a = self.amplitude();
        Ok(self.phases(x).map(|v| a * v.cos()))
    }

    /// `∂φ/∂x_ℓ`, with `ℓ` zero-based.
    pub fn phi_dot(&self, x: &[f64], coord: usize) -> Result<DVector<f64>> {
        check_dim(self.d(), x.len())?;
        self.check_coord(coord)?;
        let a = self.amplitude();
        let ph = self.phases(x);
        Ok(DVector::from_fn(self.m(), |j, _| -a * ph[j].sin() * self.omegas[(j, coord)]))
    }

    /// `∂²φ/∂x_ℓ²`, with `ℓ` zero-based.
    pub fn phi_ddot(&self, x: &[f64], coord: usize) -> Result<DVector<f64>> {
        self.check_coord(coord)?;
        let phi = self.phi(x)?;
        Ok(DVector::from_fn(self.m(), |j, _| {
            let w = self.omegas[(j, coord)];
            -phi[j] * w * w
        }))
    }

    /// `d × m` Jacobian whose row `ℓ` is `∂φ/∂x_ℓ`.
    pub fn feature_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.d(), x.len())?;
        Ok(self.jacobian_unchecked(x))
    }

    pub(crate) fn jacobian_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        let a = self.amplitude();
        let ph = self.phases(x);
        let (m, d) = (self.m(), self.d());
        let mut jac = DMatrix::zeros(d, m);
        for j in 0..m {
            let s = -a * ph[j].sin();
            for l in 0..d {
                jac[(l, j)] = s * self.omegas[(j, l)];
            }
        }
        jac
    }

    fn check_coord(&self, coord: usize) -> Result<()> {
        if coord >= self.d() {
            return Err(KmcError::invalid(format!(
                "coordinate index {coord} out of range for dimension {}",
                self.d()
            )));
        }
        Ok(())
    }

    pub fn to_record(&self) -> BasisRecord {
        match self.seed {
            Some(seed) => BasisRecord {
                spec: self.spec,
                m: self.m(),
                d: self.d(),
                seed: Some(seed),
                omegas: None,
                offsets: None,
            },
            None => BasisRecord {
                spec: self.spec,
                m: self.m(),
                d: self.d(),
                seed: None,
                omegas: Some(crate::linalg::rows_of(&self.omegas)),
                offsets: Some(self.offsets.iter().copied().collect()),
            },
        }
    }

    pub fn from_record(rec: &BasisRecord) -> Result<Self> {
        match (rec.seed, &rec.omegas, &rec.offsets) {
            (_, Some(om), Some(off)) => {
                let omegas = crate::linalg::points_from_rows(om)?;
                check_dim(rec.m, omegas.nrows())?;
                check_dim(rec.d, omegas.ncols())?;
                let mut b = FeatureBasis::from_parts(rec.spec, omegas, DVector::from_vec(off.clone()))?;
                b.seed = rec.seed;
                Ok(b)
            }
            (Some(seed), _, _) => sample_basis(&rec.spec, rec.m, rec.d, seed),
            _ => Err(KmcError::invalid("basis record needs a seed or explicit frequencies")),
        }
    }
}

/// Serialized form of a basis. Seeded bases store only `(spec, m, d, seed)`
/// and are re-materialized on load; hand-built bases carry their arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisRecord {
    pub spec: KernelSpec,
    pub m: usize,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
}
