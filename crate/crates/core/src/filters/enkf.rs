//! Stochastic (perturbed-observation) ensemble Kalman filter.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{PosteriorMean, TransitionKernel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{label, SeedNode};
use crate::ssm::{LinearGaussianObservation, StateVector};

/// Diagonal load added to the innovation covariance when its Cholesky fails.
pub const ENKF_JITTER: f64 = 1e-10;

/// Equally weighted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnkfEnsemble {
    members: Vec<StateVector>,
}

impl EnkfEnsemble {
    pub fn new(members: Vec<StateVector>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "EnKF needs at least 2 members, got {}",
                members.len()
            )));
        }
        for m in &members {
            Error::check_dim("EnKF member", members[0].dim(), m.dim())?;
        }
        Ok(EnkfEnsemble { members })
    }

    pub fn members(&self) -> &[StateVector] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.len(), |i, j| self.members[j][i])
    }
}

impl PosteriorMean for EnkfEnsemble {
    fn posterior_mean(&self) -> Result<StateVector> {
        let mut mean = vec![0.0; self.dim()];
        for m in &self.members {
            for (acc, v) in mean.iter_mut().zip(m.iter()) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        Ok(StateVector::from_vec(mean))
    }
}

#[derive(Debug, Clone)]
pub struct EnkfAnalysis {
    pub ensemble: EnkfEnsemble,
    /// The innovation covariance needed the diagonal load before it could be factored.
    pub regularized: bool,
}

/// Propagates each member independently through the kernel.
pub fn enkf_forecast<K: TransitionKernel + ?Sized>(
    e: &EnkfEnsemble,
    kernel: &K,
    seed: &SeedNode,
    exec: Execution,
) -> Result<EnkfEnsemble> {
    let members = exec.try_map_slots(e.len(), |i| {
        kernel.sample(&e.members[i], &mut seed.slot(i).stream())
    })?;
    Ok(EnkfEnsemble { members })
}

/// Analysis `xᵢ ← xᵢ + G(y + uᵢ − Hᵀxᵢ)` with `uᵢ ~ N(0, σ_y² I)` and
/// `G = P̂H (HᵀP̂H + σ_y² I)⁻¹`, `P̂` the ensemble sample covariance.
pub fn enkf_analysis(
    e: &EnkfEnsemble,
    obs: &LinearGaussianObservation,
    seed: &SeedNode,
    exec: Execution,
) -> Result<EnkfAnalysis> {
    let model = obs.model();
    Error::check_dim("enkf_analysis", model.state_dim(), e.dim())?;
    let n = e.len();
    let d_y = model.obs_dim();
    let sigma_y = model.sigma_y();
    let h = model.h();

    let x = e.as_matrix();
    let mean = x.column_mean();
    let mut anomalies = x.clone();
    for mut col in anomalies.column_iter_mut() {
        col -= &mean;
    }
    let scale = 1.0 / (n as f64 - 1.0);
    // Hᵀ A (d_y × N)
    let h_anom = h.transpose() * &anomalies;
    let cross = (&anomalies * h_anom.transpose()) * scale; // P̂H
    let mut innov_cov = (&h_anom * h_anom.transpose()) * scale;
    for j in 0..d_y {
        innov_cov[(j, j)] += sigma_y * sigma_y;
    }

    let perturbations = exec.map_slots(n, |i| {
        let mut r = seed.slot(i).child(label::PERTURB).stream();
        (0..d_y)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                sigma_y * z
            })
            .collect::<Vec<f64>>()
    });
    let hx = h.transpose() * &x;
    let y = DVector::from_column_slice(obs.y());
    let innovations = DMatrix::from_fn(d_y, n, |j, i| y[j] + perturbations[i][j] - hx[(j, i)]);

    let (solved, regularized) = solve_spd(innov_cov, innovations)?;
    let updated = x + cross * solved;
    let members = updated
        .column_iter()
        .map(|c| StateVector::new(c.iter().copied().collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnkfAnalysis {
        ensemble: EnkfEnsemble { members },
        regularized,
    })
}

fn solve_spd(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch.solve(&b), false));
    }
    let mut loaded = a;
    for j in 0..loaded.nrows() {
        loaded[(j, j)] += ENKF_JITTER;
    }
    if let Some(ch) = loaded.clone().cholesky() {
        return Ok((ch.solve(&b), true));
    }
    loaded
        .lu()
        .solve(&b)
        .map(|s| (s, true))
        .ok_or_else(|| Error::invalid("EnKF innovation covariance is singular"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{posterior_mean, FnKernel, KernelKind, SdeKernel};
    use crate::rng::RandomStream;
    use crate::sde::FnSde;
    use crate::ssm::Observation;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn needs_two_members() {
        assert!(EnkfEnsemble::new(vec![sv(&[1.0])]).is_err());
    }

    #[test]
    fn zero_spread_leaves_ensemble_unchanged() {
        let e = EnkfEnsemble::new(vec![sv(&[1.0, 2.0]); 5]).unwrap();
        let obs = LinearGaussianObservation::new(
            DMatrix::identity(2, 2),
            0.5,
            Observation::new(vec![10.0, -3.0]).unwrap(),
        )
        .unwrap();
        let out = enkf_analysis(&e, &obs, &SeedNode::new(1), Execution::Sequential).unwrap();
        assert_eq!(out.ensemble, e);
        assert!(!out.regularized);
    }

    #[test]
    fn zero_observation_matrix_gives_no_update() {
        let e =
            EnkfEnsemble::new(vec![sv(&[1.0, 2.0]), sv(&[0.0, -1.0]), sv(&[3.0, 0.5])]).unwrap();
        let obs = LinearGaussianObservation::new(
            DMatrix::zeros(2, 1),
            1.0,
            Observation::new(vec![4.0]).unwrap(),
        )
        .unwrap();
        let out = enkf_analysis(&e, &obs, &SeedNode::new(1), Execution::Sequential).unwrap();
        assert_eq!(out.ensemble, e);
    }

    #[test]
    fn scalar_update_matches_kalman() {
        let n = 100_000;
        let root = SeedNode::new(5);
        let members: Vec<StateVector> = (0..n)
            .map(|i| sv(&[StandardNormal.sample(&mut root.slot(i).stream())]))
            .collect();
        let e = EnkfEnsemble::new(members).unwrap();
        let obs = LinearGaussianObservation::new(
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            Observation::new(vec![1.0]).unwrap(),
        )
        .unwrap();
        let out = enkf_analysis(&e, &obs, &root.child(1), Execution::Parallel)
            .unwrap()
            .ensemble;
        let m = posterior_mean(&out).unwrap()[0];
        let var = out
            .members()
            .iter()
            .map(|x| (x[0] - m).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        // Prior N(0, 1), y = 1, noise variance 1: posterior N(0.5, 0.5).
        assert!((m - 0.5).abs() < 0.02, "mean {m}");
        assert!((var - 0.5).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn forecast_examples() {
        let e = EnkfEnsemble::new(vec![sv(&[1.0]), sv(&[2.0]), sv(&[4.0])]).unwrap();
        let identity = FnKernel::new(
            KernelKind::Unconstrained,
            |x: &StateVector, _: &mut RandomStream| Ok(x.clone()),
        );
        assert_eq!(
            enkf_forecast(&e, &identity, &SeedNode::new(0), Execution::Parallel).unwrap(),
            e
        );

        let shift = FnSde::new(
            1,
            |_: &[f64], _t, out: &mut [f64]| out[0] = 2.0,
            |_: &[f64], _| 0.0,
        );
        let k = SdeKernel::new(&shift, 0.0, 0.25, 1).unwrap();
        let out = enkf_forecast(&e, &k, &SeedNode::new(0), Execution::Sequential).unwrap();
        for (a, b) in out.members().iter().zip(e.members()) {
            assert!((a[0] - b[0] - 0.5).abs() < 1e-15);
        }
    }
}
