use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::hamiltonian_proposal;
use crate::error::{KmcError, Result};
use crate::rng::{rng_from_seed, KmcRng};
use crate::samplers::{ChainResult, IterationFlags, MhChain, Proposal, ProposalMeta, SamplerConfig};
use crate::targets::Target;

/// Robbins-Monro gain for step-size tuning during burn-in.
fn gain(t: usize) -> f64 {
    ((t + 1) as f64).powf(-0.6)
}

pub(crate) fn start_point(target: &dyn Target, config: &SamplerConfig) -> Vec<f64> {
    config.start.clone().unwrap_or_else(|| vec![0.0; target.dim()])
}

/// Isotropic Gaussian random walk. The log step scale follows a
/// stochastic-approximation recursion toward `rw_target_accept` during
/// burn-in and is frozen afterwards.
pub fn run_rw(target: &dyn Target, config: &SamplerConfig) -> Result<ChainResult> {
    config.validate()?;
    let d = target.dim();
    let mut rng = rng_from_seed(config.seed);
    let mut chain = MhChain::new(target, start_point(target, config), config.iterations, &mut rng)?;
    let mut log_scale = config.rw_initial_scale.unwrap_or(2.38 / (d as f64).sqrt()).ln();
    for t in 0..config.iterations {
        let scale = log_scale.exp();
        let x = &chain.state.position;
        let prop: Vec<f64> = x.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let tuning = t < config.burn_in;
        let out = chain.step(
            Ok(Proposal::symmetric(prop, ProposalMeta::RandomWalk { scale })),
            tuning,
            IterationFlags::default(),
            &mut rng,
        );
        if tuning {
            log_scale += gain(t) * (out.prob - config.rw_target_accept);
        }
    }
    let mut result = chain.finish(config.burn_in);
    result.step_scale = Some(log_scale.exp());
    Ok(result)
}

/// HMC with the exact target gradient. With `hmc_target_accept` set, the
/// step-size range is rescaled during burn-in toward that acceptance.
pub fn run_hmc(target: &dyn Target, config: &SamplerConfig) -> Result<ChainResult> {
    config.validate()?;
    let start = start_point(target, config);
    if target.grad_log_density(&start).is_none() {
        return Err(KmcError::invalid("HMC needs a target with an exact gradient"));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut chain = MhChain::new(target, start, config.iterations, &mut rng)?;
    let mut log_scale = 0.0f64;
    for t in 0..config.iterations {
        let params = config.hamiltonian.scaled(log_scale.exp());
        let tuning = config.hmc_target_accept.is_some() && t < config.burn_in;
        let proposal = hmc_proposal(target, &chain.state.position, &params, &mut rng);
        let out = chain.step(proposal, tuning, IterationFlags::default(), &mut rng);
        if let (true, Some(goal)) = (tuning, config.hmc_target_accept) {
            log_scale += gain(t) * (out.prob - goal);
        }
    }
    let mut result = chain.finish(config.burn_in);
    result.step_scale = Some(log_scale.exp());
    Ok(result)
}

fn hmc_proposal(
    target: &dyn Target,
    q: &[f64],
    params: &crate::dynamics::HamiltonianParams,
    rng: &mut KmcRng,
) -> Result<Proposal> {
    let draw = hamiltonian_proposal(
        |x, out| match target.grad_log_density(x) {
            Some(g) => out.iter_mut().zip(g).for_each(|(o, g)| *o = -g),
            None => out.fill(f64::NAN),
        },
        q,
        params,
        rng,
    )?;
    Ok(Proposal::from_hamiltonian(draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::HamiltonianParams;
    use crate::samplers::Algorithm;
    use crate::targets::{Banana, BananaParams, GaussianTarget};

    struct Flat(usize);

    impl Target for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, _x: &[f64]) -> Option<f64> {
            Some(0.0)
        }
        fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
            Some(vec![0.0; x.len()])
        }
    }

    #[test]
    fn rw_moments_on_standard_normal() {
        let target = GaussianTarget::isotropic(1, 1.0).unwrap();
        let cfg = SamplerConfig { algorithm: Algorithm::Rw, iterations: 50_000, burn_in: 1000, seed: 5, ..Default::default() };
        let r = run_rw(&target, &cfg).unwrap();
        let kept = r.kept_samples();
        let mean = kept.mean();
        let var = kept.variance() * kept.len() as f64 / (kept.len() - 1) as f64;
        let ess = crate::diagnostics::min_ess(&kept).unwrap().min_ess;
        assert!(mean.abs() <= 3.0 * (var / ess).sqrt());
        assert!((0.9..=1.1).contains(&var), "{var}");
    }

    #[test]
    fn rw_tuning_hits_target_and_freezes() {
        let target = Banana::new(BananaParams::benchmark()).unwrap();
        let cfg = SamplerConfig {
            algorithm: Algorithm::Rw,
            iterations: 6000,
            burn_in: 2000,
            seed: 1,
            ..Default::default()
        };
        let r = run_rw(&target, &cfg).unwrap();
        let acc = r.acceptance_rate();
        assert!((0.18..=0.29).contains(&acc), "{acc}");
        assert!(r.adapted[..2000].iter().all(|&a| a) && r.adapted[2000..].iter().all(|&a| !a));
        let scales: Vec<f64> = r.proposals[2000..]
            .iter()
            .map(|p| match p {
                ProposalMeta::RandomWalk { scale } => *scale,
                _ => panic!(),
            })
            .collect();
        assert!(scales.iter().all(|&s| s == scales[0]));
    }

    #[test]
    fn hmc_on_gaussian_accepts_nearly_always() {
        let target = GaussianTarget::isotropic(2, 1.0).unwrap();
        let cfg = SamplerConfig {
            algorithm: Algorithm::Hmc,
            hamiltonian: HamiltonianParams::fixed(0.1, 20),
            iterations: 1000,
            burn_in: 100,
            seed: 2,
            ..Default::default()
        };
        assert!(run_hmc(&target, &cfg).unwrap().acceptance_rate() >= 0.95);
    }

    #[test]
    fn hmc_on_flat_target_is_free_particle() {
        let cfg = SamplerConfig {
            algorithm: Algorithm::Hmc,
            hamiltonian: HamiltonianParams::fixed(0.1, 5),
            iterations: 200,
            burn_in: 0,
            ..Default::default()
        };
        let r = run_hmc(&Flat(3), &cfg).unwrap();
        assert_eq!(r.acceptance_rate(), 1.0);
    }

    #[test]
    fn hmc_needs_gradient() {
        let target = crate::targets::AbcPosterior::new(
            crate::targets::AbcParams { epsilon: 1.0, n_lik: 1, batch: 1, alpha: vec![0.0], prior_variance: 1.0 },
            vec![0.0],
        )
        .unwrap();
        let cfg = SamplerConfig { algorithm: Algorithm::Hmc, ..Default::default() };
        assert!(matches!(run_hmc(&target, &cfg), Err(KmcError::InvalidInput(_))));
    }
}
