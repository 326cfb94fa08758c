//! Discrete-time filters built on a [`TransitionKernel`] and a linear-Gaussian
//! likelihood.
//!
//! All per-particle randomness comes from slot-keyed streams: particle `i` at a
//! given step draws from `step_seed.slot(i)`, and resampling draws from a named
//! child of the step seed. A step's output therefore depends only on its inputs
//! and the step seed, never on the [`Execution`](crate::Execution) mode.

mod enkf;
mod kernel;
mod particle;

pub use enkf::{enkf_analysis, enkf_forecast, EnkfAnalysis, EnkfEnsemble, ENKF_JITTER};
pub use kernel::{
    BarrierKernel, FnKernel, KernelKind, RejectionKernel, SdeKernel, TransitionKernel,
};
pub use particle::{
    apf_step, bootstrap_pf_step, ess, multinomial_indices, multinomial_resample, normalize_weights,
    ParticleEnsemble, PfStep,
};

use crate::error::Result;
use crate::ssm::StateVector;

/// Point estimate of the filtering distribution.
pub trait PosteriorMean {
    fn posterior_mean(&self) -> Result<StateVector>;
}

pub fn posterior_mean<E: PosteriorMean + ?Sized>(e: &E) -> Result<StateVector> {
    e.posterior_mean()
}
