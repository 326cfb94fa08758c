//! Continuous-time dynamics and their Euler–Maruyama discretisation.
//!
//! Diffusion is isotropic: an [`ItoSde`] reports a scalar `σ(x, t)` and the
//! diffusion matrix is `σ·I`. Every integrator here draws exactly one standard
//! normal per coordinate per substep, in coordinate order, even when `σ = 0`, so
//! two SDEs that differ only in drift consume their random streams identically.

mod barrier;
mod lorenz96;

pub use barrier::{
    barrier_drift, barrier_log_b, barrier_log_grad, interpolate_observation, logistic,
    sample_barrier_kernel, softplus, BarrierParams, BarrierSde, BarrierSpec,
};
pub use lorenz96::{lorenz96_drift, Lorenz96Params};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::ssm::StateVector;

/// `dX = a(X, t) dt + σ(X, t) dW` with isotropic `σ`.
pub trait ItoSde: Sync {
    fn dim(&self) -> usize;

    /// Writes `a(x, t)` into `out`; both slices have length [`ItoSde::dim`].
    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn diffusion_scale(&self, x: &[f64], t: f64) -> f64;
}

impl<S: ItoSde + ?Sized> ItoSde for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).drift_into(x, t, out)
    }

    fn diffusion_scale(&self, x: &[f64], t: f64) -> f64 {
        (**self).diffusion_scale(x, t)
    }
}

/// An SDE assembled from closures. Mostly useful for tests and toy models.
pub struct FnSde<A, B> {
    dim: usize,
    drift: A,
    diffusion: B,
}

impl<A, B> FnSde<A, B>
where
    A: Fn(&[f64], f64, &mut [f64]) + Sync,
    B: Fn(&[f64], f64) -> f64 + Sync,
{
    pub fn new(dim: usize, drift: A, diffusion: B) -> Self {
        FnSde {
            dim,
            drift,
            diffusion,
        }
    }
}

impl<A, B> ItoSde for FnSde<A, B>
where
    A: Fn(&[f64], f64, &mut [f64]) + Sync,
    B: Fn(&[f64], f64) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    fn diffusion_scale(&self, x: &[f64], t: f64) -> f64 {
        (self.diffusion)(x, t)
    }
}

/// Integrator step `Δ`, observation spacing `Δ_o` and `J = Δ_o/Δ` substeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    delta: f64,
    delta_obs: f64,
    substeps: usize,
}

impl TimeGrid {
    pub fn new(delta: f64, delta_obs: f64) -> Result<Self> {
        if !(delta > 0.0 && delta_obs > 0.0) || !delta.is_finite() || !delta_obs.is_finite() {
            return Err(Error::invalid("time steps must be positive and finite"));
        }
        let j = (delta_obs / delta).round();
        if j < 1.0 || ((j * delta - delta_obs) / delta_obs).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "observation spacing {delta_obs} is not an integer multiple of step {delta}"
            )));
        }
        Ok(TimeGrid {
            delta,
            delta_obs,
            substeps: j as usize,
        })
    }

    pub fn with_substeps(delta_obs: f64, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::invalid("substep count must be at least 1"));
        }
        TimeGrid::new(delta_obs / substeps as f64, delta_obs)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_obs(&self) -> f64 {
        self.delta_obs
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Time of observation `n`, `t_n = n·Δ_o`.
    pub fn obs_time(&self, n: usize) -> f64 {
        n as f64 * self.delta_obs
    }
}

/// In-place Euler–Maruyama over `steps` uniform substeps starting at `t0`.
pub(crate) fn integrate_in_place<S: ItoSde + ?Sized>(
    sde: &S,
    x: &mut [f64],
    drift: &mut [f64],
    t0: f64,
    dt: f64,
    steps: usize,
    rng: &mut RandomStream,
) -> Result<()> {
    let sqrt_dt = dt.sqrt();
    for j in 0..steps {
        let t = t0 + j as f64 * dt;
        sde.drift_into(x, t, drift);
        if drift.iter().any(|a| !a.is_finite()) {
            return Err(Error::IntegrationFailure { t });
        }
        let scale = sde.diffusion_scale(x, t) * sqrt_dt;
        for (xk, ak) in x.iter_mut().zip(drift.iter()) {
            let z: f64 = StandardNormal.sample(rng);
            *xk += dt * ak + scale * z;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure {
            t: t0 + steps as f64 * dt,
        });
    }
    Ok(())
}

pub fn euler_maruyama_step<S: ItoSde + ?Sized>(
    sde: &S,
    x: &StateVector,
    t: f64,
    dt: f64,
    rng: &mut RandomStream,
) -> Result<StateVector> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!(
            "step size must be positive, got {dt}"
        )));
    }
    Error::check_dim("euler_maruyama_step", sde.dim(), x.dim())?;
    let mut out = x.to_vec();
    let mut drift = vec![0.0; x.dim()];
    integrate_in_place(sde, &mut out, &mut drift, t, dt, 1, rng)?;
    Ok(StateVector::from_vec(out))
}

/// `J` uniform Euler–Maruyama steps from `(x0, t0)` to `t1`; the terminal state is a
/// draw from the (discretised) transition kernel.
pub fn simulate_segment<S: ItoSde + ?Sized>(
    sde: &S,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    substeps: usize,
    rng: &mut RandomStream,
) -> Result<StateVector> {
    if !(t1 > t0) {
        return Err(Error::invalid(format!("empty interval [{t0}, {t1}]")));
    }
    if substeps == 0 {
        return Err(Error::invalid("substep count must be at least 1"));
    }
    Error::check_dim("simulate_segment", sde.dim(), x0.dim())?;
    let dt = (t1 - t0) / substeps as f64;
    let mut x = x0.to_vec();
    let mut drift = vec![0.0; x.len()];
    integrate_in_place(sde, &mut x, &mut drift, t0, dt, substeps, rng)?;
    Ok(StateVector::from_vec(x))
}

/// Noise-free explicit Euler for the drift alone, used as a point prediction.
pub fn integrate_drift<S: ItoSde + ?Sized>(
    sde: &S,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<StateVector> {
    Error::check_dim("integrate_drift", sde.dim(), x0.dim())?;
    let dt = (t1 - t0) / substeps.max(1) as f64;
    let mut x = x0.to_vec();
    let mut drift = vec![0.0; x.len()];
    for j in 0..substeps.max(1) {
        let t = t0 + j as f64 * dt;
        sde.drift_into(&x, t, &mut drift);
        for (xk, ak) in x.iter_mut().zip(&drift) {
            *xk += dt * ak;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure { t: t1 });
    }
    Ok(StateVector::from_vec(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    fn constant_sde(dim: usize, c: f64, sigma: f64) -> impl ItoSde {
        FnSde::new(
            dim,
            move |_x: &[f64], _t: f64, out: &mut [f64]| out.iter_mut().for_each(|o| *o = c),
            move |_x: &[f64], _t: f64| sigma,
        )
    }

    #[test]
    fn time_grid_rules() {
        let g = TimeGrid::new(1e-3, 0.1).unwrap();
        assert_eq!(g.substeps(), 100);
        assert!(((g.substeps() as f64 * g.delta() - g.delta_obs()) / 0.1).abs() < 1e-9);
        assert!(TimeGrid::new(0.03, 0.1).is_err());
        assert!(TimeGrid::new(0.0, 0.1).is_err());
        assert_eq!(TimeGrid::with_substeps(0.1, 7).unwrap().substeps(), 7);
    }

    #[test]
    fn step_without_noise_or_drift_is_identity() {
        let sde = constant_sde(3, 0.0, 0.0);
        let x = sv(&[1.0, -2.0, 3.5]);
        let out = euler_maruyama_step(&sde, &x, 0.0, 0.1, &mut RandomStream::from_seed(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn constant_drift_step() {
        let sde = constant_sde(2, 3.0, 0.0);
        let out = euler_maruyama_step(
            &sde,
            &sv(&[1.0, 2.0]),
            0.0,
            0.1,
            &mut RandomStream::from_seed(1),
        )
        .unwrap();
        assert!((out[0] - 1.3).abs() < 1e-15 && (out[1] - 2.3).abs() < 1e-15);
    }

    #[test]
    fn step_increment_variance_is_dt() {
        let sde = constant_sde(1, 0.0, 1.0);
        let mut rng = RandomStream::from_seed(2);
        let n = 100_000;
        let x = sv(&[0.0]);
        let incs: Vec<f64> = (0..n)
            .map(|_| euler_maruyama_step(&sde, &x, 0.0, 0.01, &mut rng).unwrap()[0])
            .collect();
        let mean = incs.iter().sum::<f64>() / n as f64;
        let var = incs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.01).abs() < 5e-4, "variance {var}");
    }

    #[test]
    fn non_finite_drift_is_reported_with_time() {
        let sde = FnSde::new(
            1,
            |x: &[f64], _t: f64, out: &mut [f64]| out[0] = if x[0] > 1.0 { f64::NAN } else { 1.0 },
            |_: &[f64], _| 0.0,
        );
        let err = simulate_segment(
            &sde,
            &sv(&[0.0]),
            0.0,
            2.0,
            20,
            &mut RandomStream::from_seed(0),
        )
        .unwrap_err();
        match err {
            Error::IntegrationFailure { t } => assert!(t > 1.0 && t < 1.2, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(
            euler_maruyama_step(&sde, &sv(&[0.0]), 0.0, 0.0, &mut RandomStream::from_seed(0))
                .is_err()
        );
    }

    #[test]
    fn one_substep_equals_one_step() {
        let sde = FnSde::new(
            2,
            |x: &[f64], _t, out: &mut [f64]| {
                out[0] = -x[1];
                out[1] = x[0];
            },
            |_: &[f64], _| 0.7,
        );
        let x = sv(&[0.3, -0.4]);
        let a = simulate_segment(&sde, &x, 0.5, 0.75, 1, &mut RandomStream::from_seed(9)).unwrap();
        let b = euler_maruyama_step(&sde, &x, 0.5, 0.25, &mut RandomStream::from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_decay_matches_exact_solution() {
        let sde = FnSde::new(
            1,
            |x: &[f64], _t, out: &mut [f64]| out[0] = -x[0],
            |_: &[f64], _| 0.0,
        );
        let out = simulate_segment(
            &sde,
            &sv(&[1.0]),
            0.0,
            1.0,
            1000,
            &mut RandomStream::from_seed(1),
        )
        .unwrap();
        assert!((out[0] - (-1f64).exp()).abs() < 2e-3);
        let det = integrate_drift(&sde, &sv(&[1.0]), 0.0, 1.0, 1000).unwrap();
        assert_eq!(det, out);
    }

    #[test]
    fn segment_is_deterministic_given_seed() {
        let sde = Lorenz96Params::new(8, 8.0, 1.0).unwrap();
        let x = StateVector::filled(8, 1.0);
        let a = simulate_segment(&sde, &x, 0.0, 0.1, 100, &mut RandomStream::from_seed(4)).unwrap();
        let b = simulate_segment(&sde, &x, 0.0, 0.1, 100, &mut RandomStream::from_seed(4)).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn ou_transient_variance() {
        // dX = −X dt + dW from X(0) = 0: Var X(1) = (1 − e⁻²)/2.
        let sde = FnSde::new(
            1,
            |x: &[f64], _t, out: &mut [f64]| out[0] = -x[0],
            |_: &[f64], _| 1.0,
        );
        let mut rng = RandomStream::from_seed(17);
        let n = 100_000;
        let x0 = sv(&[0.0]);
        let xs: Vec<f64> = (0..n)
            .map(|_| simulate_segment(&sde, &x0, 0.0, 1.0, 100, &mut rng).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let exact = (1.0 - (-2f64).exp()) / 2.0;
        assert!((var - exact).abs() < 0.01, "variance {var} vs {exact}");
    }
}
