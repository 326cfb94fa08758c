//! State-space model building blocks: vectors, priors, the linear-Gaussian
//! likelihood and superlevel-set constraints.
//!
//! Likelihoods are unnormalised with peak value 1 and are handled in log space
//! everywhere, so `log_likelihood(x) <= 0` and equality holds exactly on the affine
//! set `{x : Hᵀx = y}`.

use std::ops::Deref;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// A point of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("state vector must have positive length"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state vector entry"));
        }
        Ok(StateVector(values))
    }

    /// Wraps values produced by code that already guarantees finiteness.
    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        StateVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        StateVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        StateVector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn distance_squared(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Elementwise `self + shift`.
    pub fn offset(&self, shift: f64) -> StateVector {
        StateVector(self.0.iter().map(|v| v + shift).collect())
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVector::new(v)
    }
}

/// A measurement vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("observation must have positive length"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation entry"));
        }
        Ok(Observation(values))
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        Observation(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Isotropic Gaussian `N(mean, variance·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: StateVector,
    variance: f64,
}

impl GaussianPrior {
    pub fn new(mean: StateVector, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!(
                "prior variance must be positive, got {variance}"
            )));
        }
        Ok(GaussianPrior { mean, variance })
    }

    pub fn mean(&self) -> &StateVector {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

pub fn sample_prior(prior: &GaussianPrior, rng: &mut RandomStream) -> StateVector {
    let sd = prior.variance.sqrt();
    StateVector::from_vec(
        prior
            .mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            })
            .collect(),
    )
}

/// Observation matrix and noise scale, without a datum.
///
/// `h` is `d_x × d_y`; the measurement function is `m(x) = Hᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    h: Arc<DMatrix<f64>>,
    sigma_y: f64,
}

impl ObservationModel {
    pub fn new(h: DMatrix<f64>, sigma_y: f64) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::invalid("observation matrix must be non-empty"));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation matrix entry"));
        }
        if !(sigma_y > 0.0 && sigma_y.is_finite()) {
            return Err(Error::invalid(format!(
                "observation noise scale must be positive, got {sigma_y}"
            )));
        }
        Ok(ObservationModel {
            h: Arc::new(h),
            sigma_y,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn state_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.ncols()
    }

    /// `Hᵀx` written into `out` (length `d_y`).
    #[inline]
    pub(crate) fn project_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.h.column(j).as_slice(), x);
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("observation projection", self.state_dim(), x.len())?;
        let mut out = vec![0.0; self.obs_dim()];
        self.project_into(x, &mut out);
        Ok(out)
    }

    /// `‖y − Hᵀx‖²` without dimension checks.
    #[inline]
    pub(crate) fn residual_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        y.iter()
            .enumerate()
            .map(|(j, yj)| {
                let r = yj - dot(self.h.column(j).as_slice(), x);
                r * r
            })
            .sum()
    }

    pub fn with_datum(&self, y: Observation) -> Result<LinearGaussianObservation> {
        Error::check_dim("observation datum", self.obs_dim(), y.dim())?;
        Ok(LinearGaussianObservation {
            model: self.clone(),
            y,
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g(x) = exp{−‖y − Hᵀx‖² / (2σ_y²)}` for a fixed datum `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianObservation {
    model: ObservationModel,
    y: Observation,
}

impl LinearGaussianObservation {
    pub fn new(h: DMatrix<f64>, sigma_y: f64, y: Observation) -> Result<Self> {
        ObservationModel::new(h, sigma_y)?.with_datum(y)
    }

    pub fn model(&self) -> &ObservationModel {
        &self.model
    }

    pub fn y(&self) -> &Observation {
        &self.y
    }

    /// Log-likelihood without the dimension check; callers own the invariant.
    #[inline]
    pub(crate) fn log_likelihood_unchecked(&self, x: &[f64]) -> f64 {
        let s2 = self.model.sigma_y * self.model.sigma_y;
        -self.model.residual_sq(x, &self.y) / (2.0 * s2)
    }
}

pub fn log_likelihood(obs: &LinearGaussianObservation, x: &StateVector) -> Result<f64> {
    Error::check_dim("log_likelihood", obs.model.state_dim(), x.dim())?;
    Ok(obs.log_likelihood_unchecked(x))
}

/// `C = {x : log g(x) ≥ −ρ}`, boundary included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperlevelConstraint {
    rho: f64,
}

impl SuperlevelConstraint {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || rho.is_nan() {
            return Err(Error::invalid(format!(
                "constraint radius must be positive, got {rho}"
            )));
        }
        Ok(SuperlevelConstraint { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The likelihood threshold `υ = exp(−ρ)`.
    pub fn threshold(&self) -> f64 {
        (-self.rho).exp()
    }
}

pub fn in_constraint(
    c: &SuperlevelConstraint,
    obs: &LinearGaussianObservation,
    x: &StateVector,
) -> Result<bool> {
    Ok(log_likelihood(obs, x)? >= -c.rho)
}

/// A successful draw of the rejection sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub state: StateVector,
    /// Number of proposals drawn, including the accepted one.
    pub attempts: usize,
}

pub const DEFAULT_MAX_TRIES: usize = 10_000;

/// Exact sampler for the constrained kernel: propose from the unconstrained kernel
/// and reject until the proposal lands in `C`.
pub fn rejection_constrained_sample<F>(
    mut kernel_sampler: F,
    c: &SuperlevelConstraint,
    obs: &LinearGaussianObservation,
    x_prev: &StateVector,
    max_tries: usize,
    rng: &mut RandomStream,
) -> Result<Accepted>
where
    F: FnMut(&StateVector, &mut RandomStream) -> Result<StateVector>,
{
    if max_tries == 0 {
        return Err(Error::invalid("max_tries must be at least 1"));
    }
    for attempt in 1..=max_tries {
        let proposal = kernel_sampler(x_prev, rng)?;
        if in_constraint(c, obs, &proposal)? {
            return Ok(Accepted {
                state: proposal,
                attempts: attempt,
            });
        }
    }
    Err(Error::RejectionExhausted {
        attempts: max_tries,
    })
}
