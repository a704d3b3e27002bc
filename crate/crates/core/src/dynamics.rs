//! Hamiltonian energy, leapfrog integration and kernel-induced proposals.
//!
//! Mass is the identity throughout, so `H(q, p) = U(q) + ½‖p‖²`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KmcError, Result};
use crate::rng::KmcRng;

/// Energy change beyond which a simulated trajectory counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e3;

pub fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

pub fn hamiltonian<U: Fn(&[f64]) -> f64>(potential: U, q: &[f64], p: &[f64]) -> Result<f64> {
    check_dim(q.len(), p.len())?;
    let u = potential(q);
    if !u.is_finite() {
        return Err(KmcError::numeric(format!("potential energy is {u}")));
    }
    Ok(u + kinetic(p))
}

/// `min(1, exp(H_start − H_end))`; an infinite end energy gives 0.
pub fn accept_prob(h_start: f64, h_end: f64) -> Result<f64> {
    if h_start.is_nan() || h_end.is_nan() {
        return Err(KmcError::numeric("energy is NaN"));
    }
    if !h_start.is_finite() {
        return Err(KmcError::numeric("start energy must be finite"));
    }
    if h_end == f64::INFINITY {
        return Ok(0.0);
    }
    Ok((h_start - h_end).exp().min(1.0))
}

/// Ranges from which step size and step count are drawn per proposal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub eps_min: f64,
    pub eps_max: f64,
    pub steps_min: usize,
    pub steps_max: usize,
}

impl HamiltonianParams {
    pub fn fixed(eps: f64, steps: usize) -> Self {
        HamiltonianParams { eps_min: eps, eps_max: eps, steps_min: steps, steps_max: steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_max && self.eps_max.is_finite()) {
            return Err(KmcError::invalid(format!(
                "step sizes need 0 < eps_min <= eps_max, got [{}, {}]",
                self.eps_min, self.eps_max
            )));
        }
        if !(self.steps_min >= 1 && self.steps_min <= self.steps_max) {
            return Err(KmcError::invalid(format!(
                "step counts need 1 <= steps_min <= steps_max, got [{}, {}]",
                self.steps_min, self.steps_max
            )));
        }
        Ok(())
    }

    /// Multiplies both step-size bounds.
    pub fn scaled(&self, factor: f64) -> Self {
        HamiltonianParams { eps_min: self.eps_min * factor, eps_max: self.eps_max * factor, ..*self }
    }

    pub fn draw(&self, rng: &mut KmcRng) -> (f64, usize) {
        let eps = if self.eps_min == self.eps_max {
            self.eps_min
        } else {
            rng.random_range(self.eps_min..=self.eps_max)
        };
        let steps = rng.random_range(self.steps_min..=self.steps_max);
        (eps, steps)
    }
}

impl Default for HamiltonianParams {
    fn default() -> Self {
        HamiltonianParams { eps_min: 0.01, eps_max: 0.1, steps_min: 1, steps_max: 10 }
    }
}

/// Synchronized states along a leapfrog path, row `k` after `k` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: DMatrix<f64>,
    pub momenta: DMatrix<f64>,
    pub eps: f64,
    pub steps: usize,
    /// Step at which a non-finite state appeared; the path stops there.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Number of recorded states, `steps + 1` unless diverged.
    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn position(&self, k: usize) -> Vec<f64> {
        self.positions.row(k).iter().copied().collect()
    }

    pub fn momentum(&self, k: usize) -> Vec<f64> {
        self.momenta.row(k).iter().copied().collect()
    }

    pub fn end_position(&self) -> Vec<f64> {
        self.position(self.len() - 1)
    }

    pub fn end_momentum(&self) -> Vec<f64> {
        self.momentum(self.len() - 1)
    }

    /// `H` at every recorded state.
    pub fn energies<U: Fn(&[f64]) -> f64>(&self, potential: U) -> Vec<f64> {
        (0..self.len())
            .map(|k| potential(&self.position(k)) + kinetic(&self.momentum(k)))
            .collect()
    }

    /// CSV with columns `step, q1..qd, p1..pd, H`.
    pub fn write_csv<W: Write>(&self, out: W, energies: &[f64]) -> Result<()> {
        check_dim(self.len(), energies.len())?;
        let d = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((1..=d).map(|i| format!("q{i}")));
        header.extend((1..=d).map(|i| format!("p{i}")));
        header.push("H".into());
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.positions.row(k).iter().map(|v| v.to_string()));
            row.extend(self.momenta.row(k).iter().map(|v| v.to_string()));
            row.push(energies[k].to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> KmcError {
    KmcError::Io(std::io::Error::other(e.to_string()))
}

/// Leapfrog with `grad_u(q, out)` writing `∇U(q)` into `out`.
///
/// Each step is a half kick, a full drift and a half kick, so every recorded
/// `(q, p)` pair is synchronized. One gradient evaluation per step.
pub fn leapfrog<G>(mut grad_u: G, q0: &[f64], p0: &[f64], eps: f64, steps: usize) -> Result<Trajectory>
where
    G: FnMut(&[f64], &mut [f64]),
{
    check_dim(q0.len(), p0.len())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(KmcError::invalid(format!("step size must be positive, got {eps}")));
    }
    if steps == 0 {
        return Err(KmcError::invalid("leapfrog needs at least one step"));
    }
    let d = q0.len();
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut g = vec![0.0; d];
    let mut qs = Vec::with_capacity((steps + 1) * d);
    let mut ps = Vec::with_capacity((steps + 1) * d);
    qs.extend_from_slice(&q);
    ps.extend_from_slice(&p);
    grad_u(&q, &mut g);
    let mut diverged_at = None;
    if g.iter().any(|v| !v.is_finite()) {
        diverged_at = Some(0);
    } else {
        for k in 1..=steps {
            for i in 0..d {
                p[i] -= 0.5 * eps * g[i];
                q[i] += eps * p[i];
            }
            grad_u(&q, &mut g);
            for i in 0..d {
                p[i] -= 0.5 * eps * g[i];
            }
            if q.iter().chain(&p).chain(&g).any(|v| !v.is_finite()) {
                diverged_at = Some(k);
                break;
            }
            qs.extend_from_slice(&q);
            ps.extend_from_slice(&p);
        }
    }
    let rows = qs.len() / d.max(1);
    Ok(Trajectory {
        positions: DMatrix::from_row_slice(rows, d, &qs),
        momenta: DMatrix::from_row_slice(rows, d, &ps),
        eps,
        steps,
        diverged_at,
    })
}

/// A Hamiltonian proposal from a start position.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalDraw {
    /// End point, or the start point when the path diverged.
    pub position: Vec<f64>,
    pub momentum_start: Vec<f64>,
    pub momentum_end: Vec<f64>,
    pub eps: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Draws `p ~ N(0, I)` and `(eps, L)` from `params`, then integrates with the
/// supplied potential gradient.
pub fn hamiltonian_proposal<G>(grad_u: G, q: &[f64], params: &HamiltonianParams, rng: &mut KmcRng) -> Result<ProposalDraw>
where
    G: FnMut(&[f64], &mut [f64]),
{
    params.validate()?;
    let p0: Vec<f64> = (0..q.len()).map(|_| rng.sample(StandardNormal)).collect();
    let (eps, steps) = params.draw(rng);
    let traj = leapfrog(grad_u, q, &p0, eps, steps)?;
    let diverged = traj.diverged_at.is_some();
    Ok(ProposalDraw {
        position: if diverged { q.to_vec() } else { traj.end_position() },
        momentum_end: if diverged { p0.clone() } else { traj.end_momentum() },
        momentum_start: p0,
        eps,
        steps,
        diverged,
    })
}

/// Proposal driven by a surrogate `f ≈ log π`: the potential is `−f`, so the
/// kicks follow `+∇f`.
pub fn kernel_induced_proposal<G>(
    mut grad_f: G,
    q: &[f64],
    params: &HamiltonianParams,
    rng: &mut KmcRng,
) -> Result<ProposalDraw>
where
    G: FnMut(&[f64], &mut [f64]),
{
    hamiltonian_proposal(
        |x, out| {
            grad_f(x, out);
            out.iter_mut().for_each(|v| *v = -*v);
        },
        q,
        params,
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn harmonic(q: &[f64], out: &mut [f64]) {
        out.copy_from_slice(q);
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(hamiltonian(|_| 0.0, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(|_| 0.0, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        let u = |q: &[f64]| 0.5 * q[0] * q[0];
        assert_eq!(hamiltonian(u, &[1.0], &[1.0]).unwrap(), 1.0);
        assert!(hamiltonian(|_| f64::NAN, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn accept_prob_examples() {
        assert_eq!(accept_prob(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(accept_prob(1.0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(accept_prob(0.0, 2f64.ln()).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(accept_prob(0.0, f64::INFINITY).unwrap(), 0.0);
        assert!(accept_prob(f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn accept_prob_is_shift_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -100.0f64..100.0) {
            let p = accept_prob(a, b).unwrap();
            let q = accept_prob(a + c, b + c).unwrap();
            prop_assert!((p - q).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn free_particle_drifts() {
        let t = leapfrog(|_, o| o.fill(0.0), &[0.0], &[1.0], 0.1, 10).unwrap();
        assert_abs_diff_eq!(t.end_position()[0], 1.0, epsilon = 1e-12);
        assert_eq!(t.end_momentum()[0], 1.0);
        assert_eq!(t.len(), 11);
        assert_eq!(t.position(0), vec![0.0]);
    }

    #[test]
    fn reversibility() {
        let q0 = [0.7, -0.3];
        let p0 = [0.2, 1.1];
        let fwd = leapfrog(harmonic, &q0, &p0, 0.1, 25).unwrap();
        let pback: Vec<f64> = fwd.end_momentum().iter().map(|v| -v).collect();
        let back = leapfrog(harmonic, &fwd.end_position(), &pback, 0.1, 25).unwrap();
        for i in 0..2 {
            assert!((back.end_position()[i] - q0[i]).abs() <= 1e-10);
            assert!((back.end_momentum()[i] + p0[i]).abs() <= 1e-10);
        }
    }

    fn energy_error(eps: f64) -> f64 {
        let steps = (1.0 / eps).round() as usize;
        let t = leapfrog(harmonic, &[1.0], &[0.5], eps, steps).unwrap();
        let h = t.energies(|q| 0.5 * q[0] * q[0]);
        (h[h.len() - 1] - h[0]).abs()
    }

    #[test]
    fn second_order_energy_error() {
        let ratio = energy_error(0.1) / energy_error(0.05);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn linear_flow_preserves_volume() {
        let a = nalgebra::Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let grad = |q: &[f64], out: &mut [f64]| {
            out[0] = a[(0, 0)] * q[0] + a[(0, 1)] * q[1];
            out[1] = a[(1, 0)] * q[0] + a[(1, 1)] * q[1];
        };
        let mut jac = DMatrix::zeros(4, 4);
        for c in 0..4 {
            let mut z = [0.0; 4];
            z[c] = 1.0;
            let t = leapfrog(grad, &z[..2], &z[2..], 0.13, 7).unwrap();
            let (q, p) = (t.end_position(), t.end_momentum());
            for r in 0..2 {
                jac[(r, c)] = q[r];
                jac[(r + 2, c)] = p[r];
            }
        }
        assert!((jac.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn non_finite_gradient_marks_divergence() {
        let grad = |q: &[f64], out: &mut [f64]| out[0] = if q[0] > 0.25 { f64::NAN } else { 0.0 };
        let t = leapfrog(grad, &[0.0], &[1.0], 0.1, 10).unwrap();
        assert_eq!(t.diverged_at, Some(3));
        assert_eq!(t.len(), 3);
        let mut rng = rng_from_seed(1);
        let d = kernel_induced_proposal(|_, o| o[0] = f64::NAN, &[0.4], &HamiltonianParams::fixed(0.1, 3), &mut rng)
            .unwrap();
        assert!(d.diverged);
        assert_eq!(d.position, vec![0.4]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(leapfrog(harmonic, &[0.0], &[0.0], 0.0, 3).is_err());
        assert!(leapfrog(harmonic, &[0.0], &[0.0], 0.1, 0).is_err());
        assert!(leapfrog(harmonic, &[0.0], &[0.0, 1.0], 0.1, 1).is_err());
        let bad = HamiltonianParams { eps_min: 0.2, eps_max: 0.1, steps_min: 1, steps_max: 2 };
        assert!(bad.validate().is_err());
        assert!(HamiltonianParams::fixed(0.1, 0).validate().is_err());
    }

    #[test]
    fn zero_surrogate_gives_free_particle_proposal() {
        let mut rng = rng_from_seed(5);
        let params = HamiltonianParams { eps_min: 0.05, eps_max: 0.2, steps_min: 2, steps_max: 9 };
        for _ in 0..20 {
            let q = [0.3, -1.0, 2.0];
            let d = kernel_induced_proposal(|_, o| o.fill(0.0), &q, &params, &mut rng).unwrap();
            for i in 0..3 {
                let expected = q[i] + d.steps as f64 * d.eps * d.momentum_start[i];
                assert_abs_diff_eq!(d.position[i], expected, epsilon = 1e-12);
            }
            assert!((params.eps_min..=params.eps_max).contains(&d.eps));
            assert!((params.steps_min..=params.steps_max).contains(&d.steps));
        }
    }

    #[test]
    fn degenerate_ranges_are_deterministic_given_seed() {
        let params = HamiltonianParams::fixed(0.1, 5);
        let grad_f = |q: &[f64], o: &mut [f64]| o.iter_mut().zip(q).for_each(|(o, q)| *o = -q);
        let a = kernel_induced_proposal(grad_f, &[1.0, 0.0], &params, &mut rng_from_seed(3)).unwrap();
        let b = kernel_induced_proposal(grad_f, &[1.0, 0.0], &params, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.eps, a.steps), (0.1, 5));
    }

    #[test]
    fn exact_gaussian_gradient_gives_high_acceptance() {
        let params = HamiltonianParams::fixed(0.1, 20);
        let mut rng = rng_from_seed(11);
        let u = |q: &[f64]| 0.5 * q.iter().map(|v| v * v).sum::<f64>();
        let mut total = 0.0;
        for _ in 0..500 {
            let q: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let d = kernel_induced_proposal(|x, o| o.iter_mut().zip(x).for_each(|(o, x)| *o = -x), &q, &params, &mut rng)
                .unwrap();
            let h0 = hamiltonian(u, &q, &d.momentum_start).unwrap();
            let h1 = hamiltonian(u, &d.position, &d.momentum_end).unwrap();
            total += accept_prob(h0, h1).unwrap();
        }
        assert!(total / 500.0 >= 0.95);
    }

    #[test]
    fn trajectory_csv_layout() {
        let t = leapfrog(harmonic, &[1.0, 0.0], &[0.0, 1.0], 0.1, 3).unwrap();
        let h = t.energies(|q| 0.5 * (q[0] * q[0] + q[1] * q[1]));
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,q1,q2,p1,p2,H");
        assert_eq!(lines.len(), 5);
        let last: Vec<f64> = lines[4].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last[0], 3.0);
        assert_eq!(last[5], h[3]);
    }
}
