//! Metropolis-Hastings engine with pseudo-marginal recycling, the kernel
//! Hamiltonian samplers and the random-walk and HMC baselines.

mod baselines;
mod config;
mod kmc;

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{kinetic, ProposalDraw, DIVERGENCE_THRESHOLD};
use crate::error::{check_dim, KmcError, Result};
use crate::rng::{rng_from_seed, KmcRng};
use crate::score_matching::{FiniteModel, LiteModel};
use crate::targets::{chain_log_target, Target};

pub use baselines::{run_hmc, run_rw};
pub use config::{Algorithm, AdaptationSchedule, CvSettings, SamplerConfig, Tunable};
pub use kmc::{run_kmc_finite, run_kmc_lite, run_sampler};

/// `true` with probability `a_t`.
pub fn should_adapt(schedule: &AdaptationSchedule, t: usize, rng: &mut KmcRng) -> bool {
    let p = schedule.probability(t);
    p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    /// Log-target value computed when `position` was last accepted; never
    /// recomputed while the chain stays put.
    pub stored_log_target: f64,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalMeta {
    Hamiltonian { eps: f64, steps: usize },
    RandomWalk { scale: f64 },
    Other,
}

/// Per-iteration event bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationFlags(pub u8);

impl IterationFlags {
    pub const PROPOSAL_FAILED: u8 = 1;
    pub const DIVERGED: u8 = 2;
    pub const REFIT_FAILED: u8 = 4;
    pub const REFACTORIZED: u8 = 8;

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn set(&mut self, bit: u8) {
        self.0 |= bit;
    }
}

/// A proposed move and the log of its non-target acceptance factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub position: Vec<f64>,
    /// Added to `log π(x*) − log π(x)`; zero for symmetric proposals and
    /// `K(p′) − K(p*)` for Hamiltonian ones.
    pub log_correction: f64,
    pub meta: ProposalMeta,
    /// Forces rejection without evaluating the target.
    pub diverged: bool,
}

impl Proposal {
    pub fn symmetric(position: Vec<f64>, meta: ProposalMeta) -> Self {
        Proposal { position, log_correction: 0.0, meta, diverged: false }
    }

    pub fn from_hamiltonian(draw: ProposalDraw) -> Self {
        Proposal {
            log_correction: kinetic(&draw.momentum_start) - kinetic(&draw.momentum_end),
            meta: ProposalMeta::Hamiltonian { eps: draw.eps, steps: draw.steps },
            diverged: draw.diverged,
            position: draw.position,
        }
    }

    fn is_hamiltonian(&self) -> bool {
        matches!(self.meta, ProposalMeta::Hamiltonian { .. })
    }
}

/// Surrogate held at the end of a KMC run.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedModel {
    Lite(LiteModel),
    Finite(FiniteModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainResult {
    /// Row `t` is the state after iteration `t`.
    pub samples: DMatrix<f64>,
    pub accepted: Vec<bool>,
    pub adapted: Vec<bool>,
    /// Stored log-target after each iteration.
    pub log_targets: Vec<f64>,
    pub proposals: Vec<ProposalMeta>,
    pub flags: Vec<IterationFlags>,
    pub burn_in: usize,
    /// Tuned RW scale or HMC step-size multiplier.
    pub step_scale: Option<f64>,
    /// Kernel parameters in use at the end, `(σ, λ)`.
    pub kernel_params: Option<(f64, f64)>,
    pub final_model: Option<FittedModel>,
    pub elapsed_secs: f64,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Samples after burn-in.
    pub fn kept_samples(&self) -> DMatrix<f64> {
        self.samples.rows(self.burn_in, self.len() - self.burn_in).into_owned()
    }

    pub fn acceptance_rate(&self) -> f64 {
        crate::diagnostics::acceptance_rate(&self.accepted, self.burn_in).unwrap_or(0.0)
    }

    /// One row per iteration: coordinates, accepted, adapted, log_target,
    /// eps, L, flags. `eps` carries the RW scale for random-walk proposals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.extend(["accepted", "adapted", "log_target", "eps", "L", "flags"].map(String::from));
        w.write_record(&header).map_err(crate::dynamics::csv_err)?;
        for t in 0..self.len() {
            let mut row: Vec<String> = self.samples.row(t).iter().map(|v| v.to_string()).collect();
            row.push((self.accepted[t] as u8).to_string());
            row.push((self.adapted[t] as u8).to_string());
            row.push(self.log_targets[t].to_string());
            let (eps, steps) = match self.proposals[t] {
                ProposalMeta::Hamiltonian { eps, steps } => (eps.to_string(), steps.to_string()),
                ProposalMeta::RandomWalk { scale } => (scale.to_string(), String::new()),
                ProposalMeta::Other => (String::new(), String::new()),
            };
            row.push(eps);
            row.push(steps);
            row.push(self.flags[t].0.to_string());
            w.write_record(&row).map_err(crate::dynamics::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one MH transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct StepOutcome {
    pub accepted: bool,
    /// Acceptance probability; 0 for failed or diverged proposals.
    pub prob: f64,
}

/// Chain bookkeeping shared by all samplers.
pub(crate) struct MhChain<'a> {
    target: &'a dyn Target,
    pub state: ChainState,
    samples: Vec<f64>,
    accepted: Vec<bool>,
    adapted: Vec<bool>,
    log_targets: Vec<f64>,
    proposals: Vec<ProposalMeta>,
    flags: Vec<IterationFlags>,
    started: Instant,
}

impl<'a> MhChain<'a> {
    pub fn new(target: &'a dyn Target, start: Vec<f64>, iterations: usize, rng: &mut KmcRng) -> Result<Self> {
        check_dim(target.dim(), start.len())?;
        let lp = chain_log_target(target, &start, rng)?;
        if !lp.is_finite() {
            return Err(KmcError::invalid("log target at the start point must be finite"));
        }
        Ok(MhChain {
            target,
            state: ChainState { position: start, stored_log_target: lp, iteration: 0 },
            samples: Vec::with_capacity(iterations * target.dim()),
            accepted: Vec::with_capacity(iterations),
            adapted: Vec::with_capacity(iterations),
            log_targets: Vec::with_capacity(iterations),
            proposals: Vec::with_capacity(iterations),
            flags: Vec::with_capacity(iterations),
            started: Instant::now(),
        })
    }

    /// One MH transition. The stored log-target of the current state is
    /// reused, only the proposal is evaluated.
    pub fn step(&mut self, proposal: Result<Proposal>, adapted: bool, mut flags: IterationFlags, rng: &mut KmcRng) -> StepOutcome {
        let mut outcome = StepOutcome { accepted: false, prob: 0.0 };
        let meta = match proposal {
            Err(_) => {
                flags.set(IterationFlags::PROPOSAL_FAILED);
                ProposalMeta::Other
            }
            Ok(p) if p.diverged => {
                flags.set(IterationFlags::DIVERGED);
                p.meta
            }
            Ok(p) => {
                match chain_log_target(self.target, &p.position, rng) {
                    Err(_) => flags.set(IterationFlags::PROPOSAL_FAILED),
                    Ok(lp_new) => {
                        let log_ratio = lp_new - self.state.stored_log_target + p.log_correction;
                        if p.is_hamiltonian() && log_ratio.abs() > DIVERGENCE_THRESHOLD {
                            flags.set(IterationFlags::DIVERGED);
                        } else {
                            outcome.prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
                            let u: f64 = rng.random();
                            if u < outcome.prob {
                                outcome.accepted = true;
                                self.state.position.clone_from(&p.position);
                                self.state.stored_log_target = lp_new;
                            }
                        }
                    }
                }
                p.meta
            }
        };
        self.samples.extend_from_slice(&self.state.position);
        self.accepted.push(outcome.accepted);
        self.adapted.push(adapted);
        self.log_targets.push(self.state.stored_log_target);
        self.proposals.push(meta);
        self.flags.push(flags);
        self.state.iteration += 1;
        outcome
    }

    pub fn finish(self, burn_in: usize) -> ChainResult {
        let t = self.accepted.len();
        let d = self.target.dim();
        ChainResult {
            samples: DMatrix::from_row_slice(t, d, &self.samples),
            accepted: self.accepted,
            adapted: self.adapted,
            log_targets: self.log_targets,
            proposals: self.proposals,
            flags: self.flags,
            burn_in,
            step_scale: None,
            kernel_params: None,
            final_model: None,
            elapsed_secs: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Generic MH loop over a proposal callback.
///
/// A failing callback counts as a rejection and is flagged.
pub fn run_mh<F>(target: &dyn Target, start: Vec<f64>, mut propose: F, iterations: usize, seed: u64) -> Result<ChainResult>
where
    F: FnMut(&ChainState, &mut KmcRng) -> Result<Proposal>,
{
    if iterations == 0 {
        return Err(KmcError::invalid("iterations must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut chain = MhChain::new(target, start, iterations, &mut rng)?;
    for _ in 0..iterations {
        let p = propose(&chain.state, &mut rng);
        chain.step(p, false, IterationFlags::default(), &mut rng);
    }
    Ok(chain.finish(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{GaussianTarget, NoisyTarget};
    use rand_distr::StandardNormal;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn identity_proposal_accepts_everything() {
        let target = GaussianTarget::isotropic(2, 1.0).unwrap();
        let r = run_mh(&target, vec![0.5, -0.5], |s, _| Ok(Proposal::symmetric(s.position.clone(), ProposalMeta::Other)), 100, 1)
            .unwrap();
        assert!(r.accepted.iter().all(|&a| a));
        assert!(r.samples.row_iter().all(|row| row[0] == 0.5 && row[1] == -0.5));
    }

    #[test]
    fn random_walk_recovers_standard_normal_moments() {
        let target = GaussianTarget::isotropic(1, 1.0).unwrap();
        let r = run_mh(
            &target,
            vec![0.0],
            |s, rng| {
                let z: f64 = rng.sample(StandardNormal);
                Ok(Proposal::symmetric(vec![s.position[0] + 2.4 * z], ProposalMeta::RandomWalk { scale: 2.4 }))
            },
            50_000,
            2,
        )
        .unwrap();
        let x: Vec<f64> = r.samples.column(0).iter().copied().collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        let ess = crate::diagnostics::min_ess(&r.samples).unwrap().min_ess;
        assert!(mean.abs() <= 3.0 * (var / ess).sqrt(), "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "var {var}");
    }

    #[test]
    fn rejection_copies_state_and_failures_are_flagged() {
        let target = GaussianTarget::isotropic(1, 1.0).unwrap();
        let mut k = 0;
        let r = run_mh(
            &target,
            vec![0.0],
            |_, _| {
                k += 1;
                match k % 3 {
                    0 => Err(KmcError::numeric("boom")),
                    1 => Ok(Proposal::symmetric(vec![50.0], ProposalMeta::Other)),
                    _ => Ok(Proposal { position: vec![0.1], log_correction: 0.0, meta: ProposalMeta::Other, diverged: true }),
                }
            },
            9,
            3,
        )
        .unwrap();
        assert!(r.accepted.iter().all(|&a| !a));
        assert!(r.samples.iter().all(|&v| v == 0.0));
        assert!(r.flags[2].has(IterationFlags::PROPOSAL_FAILED));
        assert!(r.flags[1].has(IterationFlags::DIVERGED));
    }

    struct CountingTarget {
        inner: NoisyTarget<GaussianTarget>,
        estimates: AtomicUsize,
    }

    impl Target for CountingTarget {
        fn dim(&self) -> usize {
            1
        }
        fn estimate_log_density(&self, x: &[f64], rng: &mut KmcRng) -> Option<f64> {
            self.estimates.fetch_add(1, Ordering::Relaxed);
            self.inner.estimate_log_density(x, rng)
        }
        fn is_noisy(&self) -> bool {
            true
        }
    }

    #[test]
    fn recycling_never_re_estimates_current_state() {
        let target = CountingTarget {
            inner: NoisyTarget::new(GaussianTarget::isotropic(1, 1.0).unwrap(), 1.5).unwrap(),
            estimates: AtomicUsize::new(0),
        };
        let r = run_mh(
            &target,
            vec![0.0],
            |s, rng| {
                let z: f64 = rng.sample(StandardNormal);
                Ok(Proposal::symmetric(vec![s.position[0] + z], ProposalMeta::RandomWalk { scale: 1.0 }))
            },
            2000,
            4,
        )
        .unwrap();
        assert_eq!(target.estimates.load(Ordering::Relaxed), 2001);
        for t in 1..r.len() {
            if !r.accepted[t] {
                assert_eq!(r.log_targets[t].to_bits(), r.log_targets[t - 1].to_bits());
            }
        }
        assert!(r.accepted.iter().any(|&a| a) && r.accepted.iter().any(|&a| !a));
    }

    #[test]
    fn adaptation_probability_schedule() {
        let s = AdaptationSchedule { exponent: 0.5, scale: 1.0 };
        let mut rng = rng_from_seed(1);
        assert_eq!(s.probability(0), 1.0);
        assert!(should_adapt(&s, 0, &mut rng));
        let (lo, n) = (10_000usize, 1000usize);
        let hits = (lo..lo + n).filter(|&t| should_adapt(&s, t, &mut rng)).count() as f64;
        let expected: f64 = (lo..lo + n).map(|t| s.probability(t)).sum();
        let var: f64 = (lo..lo + n).map(|t| s.probability(t) * (1.0 - s.probability(t))).sum();
        assert!((hits - expected).abs() <= 3.0 * var.sqrt());
        let harmonic = AdaptationSchedule { exponent: 1.0, scale: 1.0 };
        let partial: f64 = (0..1_000_000).map(|t| harmonic.probability(t)).sum();
        assert!(partial > 10.0);
    }

    #[test]
    fn chain_csv_has_expected_columns() {
        let target = GaussianTarget::isotropic(2, 1.0).unwrap();
        let r = run_mh(&target, vec![0.0, 0.0], |s, _| Ok(Proposal::symmetric(s.position.clone(), ProposalMeta::Other)), 3, 1)
            .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,x2,accepted,adapted,log_target,eps,L,flags");
        assert_eq!(text.lines().count(), 4);
    }
}
