use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{leapfrog, Trajectory};
use crate::error::{KmcError, Result};
use crate::experiments::{mean, step_acceptance, Bandwidth};
use crate::features::sample_basis;
use crate::kernels::KernelSpec;
use crate::rng::{derive_seed, rng_stream};
use crate::score_matching::{fit_finite_batch, GradientModel};
use crate::targets::{sample_matrix, GaussianTarget, Target};

/// Exact versus kernel-induced trajectories on an isotropic standard
/// Gaussian, started from matched target draws and momenta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryStudyConfig {
    pub d: usize,
    /// Ground-truth draws the surrogate is trained on.
    pub n_train: usize,
    pub n_basis: usize,
    pub sigma: Bandwidth,
    pub lambda: f64,
    pub n_starts: usize,
    pub eps: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrajectoryStudyConfig {
    fn default() -> Self {
        TrajectoryStudyConfig {
            d: 2,
            n_train: 2000,
            n_basis: 500,
            sigma: Bandwidth::Cv,
            lambda: 1e-3,
            n_starts: 200,
            eps: 0.1,
            steps: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryStudy {
    pub sigma: f64,
    pub exact: Vec<Trajectory>,
    pub surrogate: Vec<Trajectory>,
    /// End-point acceptance per start.
    pub exact_acceptance: Vec<f64>,
    pub surrogate_acceptance: Vec<f64>,
    pub(crate) potential: GaussianTarget,
}

impl TrajectoryStudy {
    pub fn mean_exact(&self) -> f64 {
        mean(&self.exact_acceptance)
    }

    pub fn mean_surrogate(&self) -> f64 {
        mean(&self.surrogate_acceptance)
    }

    /// One row per step: `kind, start, step, q.., p.., H, acceptance`, with
    /// `H` always the true Hamiltonian.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.potential.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["kind", "start", "step"].map(String::from).to_vec();
        header.extend((1..=d).map(|i| format!("q{i}")));
        header.extend((1..=d).map(|i| format!("p{i}")));
        header.extend(["H", "acceptance"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        let u = |q: &[f64]| -self.potential.log_density(q).unwrap_or(f64::NAN);
        for (kind, trajs) in [("exact", &self.exact), ("surrogate", &self.surrogate)] {
            for (s, traj) in trajs.iter().enumerate() {
                let h = traj.energies(u);
                let acc = step_acceptance(u, traj)?;
                for k in 0..traj.len() {
                    let mut row = vec![kind.to_string(), s.to_string(), k.to_string()];
                    row.extend(traj.position(k).iter().map(|v| v.to_string()));
                    row.extend(traj.momentum(k).iter().map(|v| v.to_string()));
                    row.push(h[k].to_string());
                    row.push(if k == 0 { "1".into() } else { acc[k - 1].to_string() });
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> KmcError {
    KmcError::Io(std::io::Error::other(e))
}

pub fn run_trajectory_study(config: &TrajectoryStudyConfig) -> Result<TrajectoryStudy> {
    if config.steps == 0 || !(config.eps > 0.0) {
        return Err(KmcError::invalid("trajectories need eps > 0 and at least one step"));
    }
    if config.n_starts == 0 || config.n_train < 2 {
        return Err(KmcError::invalid("need at least one start and two training points"));
    }
    let target = GaussianTarget::isotropic(config.d, 1.0)?;
    let train = sample_matrix(&target, config.n_train, &mut rng_stream(config.seed, 0))?;
    let basis_seed = derive_seed(config.seed, 1);
    let sigma = config.sigma.resolve(&train, config.lambda, config.n_basis.min(300), basis_seed)?;
    let basis = sample_basis(&KernelSpec::gaussian(sigma)?, config.n_basis, config.d, basis_seed)?;
    let model = fit_finite_batch(&train, &basis, config.lambda)?;

    let mut rng = rng_stream(config.seed, 2);
    let u = |q: &[f64]| -target.log_density(q).unwrap_or(f64::NAN);
    let mut study = TrajectoryStudy {
        sigma,
        exact: Vec::new(),
        surrogate: Vec::new(),
        exact_acceptance: Vec::new(),
        surrogate_acceptance: Vec::new(),
        potential: target.clone(),
    };
    for _ in 0..config.n_starts {
        let q0 = target.sample(&mut rng).ok_or_else(|| KmcError::invalid("target cannot be sampled"))?;
        let p0: Vec<f64> = (0..config.d).map(|_| rng.sample(StandardNormal)).collect();
        let exact = leapfrog(
            |q, g| {
                let grad = target.grad_log_density(q).unwrap_or_else(|| vec![f64::NAN; q.len()]);
                g.iter_mut().zip(grad).for_each(|(g, v)| *g = -v);
            },
            &q0,
            &p0,
            config.eps,
            config.steps,
        )?;
        let surrogate = leapfrog(
            |q, g| {
                model.grad_into(q, g);
                g.iter_mut().for_each(|v| *v = -*v);
            },
            &q0,
            &p0,
            config.eps,
            config.steps,
        )?;
        study.exact_acceptance.push(*step_acceptance(u, &exact)?.last().unwrap_or(&0.0));
        study.surrogate_acceptance.push(*step_acceptance(u, &surrogate)?.last().unwrap_or(&0.0));
        study.exact.push(exact);
        study.surrogate.push(surrogate);
    }
    Ok(study)
}
