//! Soft-plus barrier on the interpolated negative log-likelihood.
//!
//! On `[t_prev, t_next]` the datum is interpolated linearly between `y_prev` and
//! `y_next`, giving `q(x, t) = ‖y(t) − Hᵀx‖² / (2σ_y²)` and the barrier
//! `log b(x, t) = u_{ρ,κ}(q(x, t))`. The guided SDE replaces the drift by
//! `a(x, t) − μ σ²(x, t) ∇ log b(x, t)`, pushing paths back into the tube
//! `{x : q(x, t) ≤ ρ}` while leaving paths well inside it essentially untouched.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{simulate_segment, ItoSde, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::ssm::{dot, Observation, ObservationModel, StateVector};

type Scratch = SmallVec<[f64; 64]>;

/// Shifted soft-plus `u(z) = (1/κ) log(1 + exp{κ(z − ρ)})`, evaluated without overflow.
#[inline]
pub fn softplus(rho: f64, kappa: f64, z: f64) -> f64 {
    let a = kappa * (z - rho);
    (a.max(0.0) + (-a.abs()).exp().ln_1p()) / kappa
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Radius `ρ`, sharpness `κ ≥ 1` and strength `μ ≥ 0` of the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub rho: f64,
    pub kappa: f64,
    pub mu: f64,
}

impl BarrierParams {
    pub fn new(rho: f64, kappa: f64, mu: f64) -> Result<Self> {
        let p = BarrierParams { rho, kappa, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid(format!(
                "barrier rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!(
                "barrier kappa must be >= 1, got {}",
                self.kappa
            )));
        }
        // μ = 0 is allowed: it switches the barrier off.
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!(
                "barrier mu must be >= 0, got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Barrier for one observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec {
    params: BarrierParams,
    obs_model: ObservationModel,
    y_prev: Observation,
    y_next: Observation,
    t_prev: f64,
    t_next: f64,
}

impl BarrierSpec {
    pub fn new(
        params: BarrierParams,
        obs_model: ObservationModel,
        y_prev: Observation,
        y_next: Observation,
        t_prev: f64,
        t_next: f64,
    ) -> Result<Self> {
        params.validate()?;
        Error::check_dim("barrier y_prev", obs_model.obs_dim(), y_prev.dim())?;
        Error::check_dim("barrier y_next", obs_model.obs_dim(), y_next.dim())?;
        if !(t_prev < t_next) {
            return Err(Error::invalid(format!(
                "barrier interval must satisfy t_prev < t_next, got [{t_prev}, {t_next}]"
            )));
        }
        Ok(BarrierSpec {
            params,
            obs_model,
            y_prev,
            y_next,
            t_prev,
            t_next,
        })
    }

    pub fn params(&self) -> &BarrierParams {
        &self.params
    }

    pub fn obs_model(&self) -> &ObservationModel {
        &self.obs_model
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_prev, self.t_next)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < self.t_prev || t > self.t_next || t.is_nan() {
            return Err(Error::OutsideInterval {
                t,
                start: self.t_prev,
                end: self.t_next,
            });
        }
        Ok(())
    }

    /// Interpolation weight of `y_next`, clamped to `[0, 1]`.
    #[inline]
    fn weight(&self, t: f64) -> f64 {
        ((t - self.t_prev) / (self.t_next - self.t_prev)).clamp(0.0, 1.0)
    }

    /// Writes `Hᵀx − y(t)` into `r` and returns `q(x, t)`.
    #[inline]
    fn residual(&self, x: &[f64], t: f64, r: &mut Scratch) -> f64 {
        let w = self.weight(t);
        let h = self.obs_model.h();
        r.clear();
        let mut sq = 0.0;
        for j in 0..self.obs_model.obs_dim() {
            let yj = (1.0 - w) * self.y_prev[j] + w * self.y_next[j];
            let rj = dot(h.column(j).as_slice(), x) - yj;
            sq += rj * rj;
            r.push(rj);
        }
        let s2 = self.obs_model.sigma_y() * self.obs_model.sigma_y();
        sq / (2.0 * s2)
    }

    /// Adds `scale · ∇ log b(x, t)` to `out`.
    #[inline]
    fn accumulate_grad(&self, x: &[f64], t: f64, scale: f64, out: &mut [f64]) {
        let mut r = Scratch::new();
        let q = self.residual(x, t, &mut r);
        let BarrierParams { rho, kappa, .. } = self.params;
        let s2 = self.obs_model.sigma_y() * self.obs_model.sigma_y();
        let coef = scale * logistic(kappa * (q - rho)) / s2;
        if coef == 0.0 {
            return;
        }
        let h = self.obs_model.h();
        for (j, rj) in r.iter().enumerate() {
            let c = coef * rj;
            for (o, hij) in out.iter_mut().zip(h.column(j).as_slice()) {
                *o += c * hij;
            }
        }
    }
}

/// `y(t)`, the affine interpolation of the data at the interval endpoints.
pub fn interpolate_observation(b: &BarrierSpec, t: f64) -> Result<Observation> {
    b.check_time(t)?;
    let w = b.weight(t);
    Ok(Observation::from_vec(
        b.y_prev
            .iter()
            .zip(b.y_next.iter())
            .map(|(p, n)| (1.0 - w) * p + w * n)
            .collect(),
    ))
}

/// `log b(x, t) = u_{ρ,κ}(q(x, t))`.
pub fn barrier_log_b(b: &BarrierSpec, x: &StateVector, t: f64) -> Result<f64> {
    b.check_time(t)?;
    Error::check_dim("barrier_log_b", b.obs_model.state_dim(), x.dim())?;
    let mut r = Scratch::new();
    let q = b.residual(x, t, &mut r);
    Ok(softplus(b.params.rho, b.params.kappa, q))
}

/// `∇ₓ log b(x, t) = σ_y⁻² s(κ(q − ρ)) H(Hᵀx − y(t))`.
pub fn barrier_log_grad(b: &BarrierSpec, x: &StateVector, t: f64) -> Result<StateVector> {
    b.check_time(t)?;
    Error::check_dim("barrier_log_grad", b.obs_model.state_dim(), x.dim())?;
    let mut g = vec![0.0; x.dim()];
    b.accumulate_grad(x, t, 1.0, &mut g);
    Ok(StateVector::from_vec(g))
}

/// The base SDE with its drift corrected by the barrier.
pub struct BarrierSde<'a, S: ?Sized> {
    base: &'a S,
    spec: &'a BarrierSpec,
}

impl<'a, S: ItoSde + ?Sized> BarrierSde<'a, S> {
    pub fn new(base: &'a S, spec: &'a BarrierSpec) -> Result<Self> {
        Error::check_dim("barrier SDE", spec.obs_model.state_dim(), base.dim())?;
        Ok(BarrierSde { base, spec })
    }
}

impl<S: ItoSde + ?Sized> ItoSde for BarrierSde<'_, S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    #[inline]
    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.base.drift_into(x, t, out);
        let mu = self.spec.params.mu;
        if mu == 0.0 {
            return;
        }
        let sigma = self.base.diffusion_scale(x, t);
        self.spec.accumulate_grad(x, t, -mu * sigma * sigma, out);
    }

    fn diffusion_scale(&self, x: &[f64], t: f64) -> f64 {
        self.base.diffusion_scale(x, t)
    }
}

pub fn barrier_drift<S: ItoSde + ?Sized>(
    base: &S,
    b: &BarrierSpec,
    x: &StateVector,
    t: f64,
) -> Result<StateVector> {
    b.check_time(t)?;
    let sde = BarrierSde::new(base, b)?;
    Error::check_dim("barrier_drift", sde.dim(), x.dim())?;
    let mut out = vec![0.0; x.dim()];
    sde.drift_into(x, t, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure { t });
    }
    Ok(StateVector::from_vec(out))
}

/// Approximate draw from the constrained kernel: Euler–Maruyama on the guided SDE
/// across the barrier interval with `grid.substeps()` substeps.
pub fn sample_barrier_kernel<S: ItoSde + ?Sized>(
    base: &S,
    b: &BarrierSpec,
    x_prev: &StateVector,
    grid: &TimeGrid,
    rng: &mut RandomStream,
) -> Result<StateVector> {
    let sde = BarrierSde::new(base, b)?;
    simulate_segment(&sde, x_prev, b.t_prev, b.t_next, grid.substeps(), rng)
}
