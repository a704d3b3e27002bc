//! Gradient-free kernel Hamiltonian Monte Carlo.
//!
//! Kernel surrogates of the log-target gradient are learned from the chain
//! history by score matching and used to simulate Hamiltonian proposals that
//! are corrected with Metropolis-Hastings against (possibly noisy) target
//! evaluations.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod features;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod samplers;
pub mod score_matching;
pub mod targets;

pub use error::{KmcError, Result};
pub use features::{sample_basis, FeatureBasis};
pub use kernels::{KernelFamily, KernelSpec};
pub use rng::{rng_from_seed, KmcRng};
pub use score_matching::{FiniteModel, GradientModel, LiteModel, ZeroModel};
