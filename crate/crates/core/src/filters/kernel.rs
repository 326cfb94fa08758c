use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sde::{sample_barrier_kernel, simulate_segment, BarrierSpec, ItoSde, TimeGrid};
use crate::ssm::{
    rejection_constrained_sample, LinearGaussianObservation, StateVector, SuperlevelConstraint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Unconstrained,
    Barrier,
    Rejection,
}

/// A Markov transition kernel `K_n(x_prev, dx)` for one observation interval.
///
/// Implementations must be deterministic given the input state and stream state.
pub trait TransitionKernel: Sync {
    fn kind(&self) -> KernelKind;

    fn sample(&self, x_prev: &StateVector, rng: &mut RandomStream) -> Result<StateVector>;
}

impl<K: TransitionKernel + ?Sized> TransitionKernel for &K {
    fn kind(&self) -> KernelKind {
        (**self).kind()
    }

    fn sample(&self, x_prev: &StateVector, rng: &mut RandomStream) -> Result<StateVector> {
        (**self).sample(x_prev, rng)
    }
}

/// Euler–Maruyama simulation of an SDE across `[t0, t1]`.
pub struct SdeKernel<'a, S: ?Sized> {
    sde: &'a S,
    t0: f64,
    t1: f64,
    substeps: usize,
}

impl<'a, S: ItoSde + ?Sized> SdeKernel<'a, S> {
    pub fn new(sde: &'a S, t0: f64, t1: f64, substeps: usize) -> Result<Self> {
        if !(t1 > t0) || substeps == 0 {
            return Err(Error::invalid(
                "SDE kernel needs t1 > t0 and at least one substep",
            ));
        }
        Ok(SdeKernel {
            sde,
            t0,
            t1,
            substeps,
        })
    }
}

impl<S: ItoSde + ?Sized> TransitionKernel for SdeKernel<'_, S> {
    fn kind(&self) -> KernelKind {
        KernelKind::Unconstrained
    }

    fn sample(&self, x_prev: &StateVector, rng: &mut RandomStream) -> Result<StateVector> {
        simulate_segment(self.sde, x_prev, self.t0, self.t1, self.substeps, rng)
    }
}

/// Barrier-guided simulation approximating the constrained kernel.
pub struct BarrierKernel<'a, S: ?Sized> {
    sde: &'a S,
    spec: BarrierSpec,
    grid: TimeGrid,
}

impl<'a, S: ItoSde + ?Sized> BarrierKernel<'a, S> {
    pub fn new(sde: &'a S, spec: BarrierSpec, grid: TimeGrid) -> Result<Self> {
        Error::check_dim("barrier kernel", spec.obs_model().state_dim(), sde.dim())?;
        Ok(BarrierKernel { sde, spec, grid })
    }

    pub fn spec(&self) -> &BarrierSpec {
        &self.spec
    }
}

impl<S: ItoSde + ?Sized> TransitionKernel for BarrierKernel<'_, S> {
    fn kind(&self) -> KernelKind {
        KernelKind::Barrier
    }

    fn sample(&self, x_prev: &StateVector, rng: &mut RandomStream) -> Result<StateVector> {
        sample_barrier_kernel(self.sde, &self.spec, x_prev, &self.grid, rng)
    }
}

/// Exact constrained kernel by rejection from an inner kernel.
pub struct RejectionKernel<K> {
    inner: K,
    constraint: SuperlevelConstraint,
    obs: LinearGaussianObservation,
    max_tries: usize,
}

impl<K: TransitionKernel> RejectionKernel<K> {
    pub fn new(
        inner: K,
        constraint: SuperlevelConstraint,
        obs: LinearGaussianObservation,
        max_tries: usize,
    ) -> Self {
        RejectionKernel {
            inner,
            constraint,
            obs,
            max_tries,
        }
    }
}

impl<K: TransitionKernel> TransitionKernel for RejectionKernel<K> {
    fn kind(&self) -> KernelKind {
        KernelKind::Rejection
    }

    fn sample(&self, x_prev: &StateVector, rng: &mut RandomStream) -> Result<StateVector> {
        rejection_constrained_sample(
            |x, r| self.inner.sample(x, r),
            &self.constraint,
            &self.obs,
            x_prev,
            self.max_tries,
            rng,
        )
        .map(|a| a.state)
    }
}

/// A kernel given by a closure.
pub struct FnKernel<F> {
    kind: KernelKind,
    f: F,
}

impl<F> FnKernel<F>
where
    F: Fn(&StateVector, &mut RandomStream) -> Result<StateVector> + Sync,
{
    pub fn new(kind: KernelKind, f: F) -> Self {
        FnKernel { kind, f }
    }
}

impl<F> TransitionKernel for FnKernel<F>
where
    F: Fn(&StateVector, &mut RandomStream) -> Result<StateVector> + Sync,
{
    fn kind(&self) -> KernelKind {
        self.kind
    }

    fn sample(&self, x_prev: &StateVector, rng: &mut RandomStream) -> Result<StateVector> {
        (self.f)(x_prev, rng)
    }
}
