//! Synthetic observation matrices and ground-truth trajectories.

use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::DMatrix;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sde::simulate_segment;
use crate::ssm::{Observation, ObservationModel, StateVector};

/// `H = [e_{m₁}, …, e_{m_{d_y}}] + V` with distinct rows `mⱼ` drawn uniformly
/// without replacement and `V` entries `N(0, σ_v²)`.
pub fn generate_observation_matrix(
    d_x: usize,
    d_y: usize,
    sigma_v: f64,
    rng: &mut RandomStream,
) -> Result<DMatrix<f64>> {
    if d_y == 0 || d_y > d_x {
        return Err(Error::invalid(format!(
            "observation matrix needs 1 <= d_y <= d_x, got d_y = {d_y}, d_x = {d_x}"
        )));
    }
    if !(sigma_v >= 0.0) || !sigma_v.is_finite() {
        return Err(Error::invalid("sigma_v must be non-negative"));
    }
    let rows = index::sample(rng, d_x, d_y).into_vec();
    let mut h = DMatrix::zeros(d_x, d_y);
    for j in 0..d_y {
        for i in 0..d_x {
            let z: f64 = StandardNormal.sample(rng);
            h[(i, j)] = sigma_v * z;
        }
        h[(rows[j], j)] += 1.0;
    }
    Ok(h)
}

/// A simulated trajectory with its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `X_0, …, X_T`.
    pub states: Vec<StateVector>,
    /// `Y_1, …, Y_T`; `observations[n − 1]` belongs to `states[n]`.
    pub observations: Vec<Observation>,
}

impl GroundTruth {
    pub fn t_obs(&self) -> usize {
        self.observations.len()
    }

    /// Hash over the bit patterns of all states and observations, used to check that
    /// experiment arms share their data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for x in &self.states {
            x.iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        for y in &self.observations {
            y.iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    }
}

/// Draws `X(0) ~ N(F·1, I)`, integrates the spin-up and then simulates `t_obs`
/// observation intervals from the endpoint.
pub fn generate_ground_truth(
    model: &ModelConfig,
    obs: &ObservationModel,
    t_obs: usize,
    rng: &mut RandomStream,
) -> Result<GroundTruth> {
    let l96 = model.lorenz96()?;
    let grid = model.time_grid()?;
    let start = StateVector::from_vec(
        (0..model.d_x)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                model.forcing + z
            })
            .collect(),
    );
    let spin_steps = (model.spinup / grid.delta()).round() as usize;
    let x0 = if spin_steps == 0 {
        start
    } else {
        simulate_segment(&l96, &start, -model.spinup, 0.0, spin_steps, rng)?
    };
    ground_truth_from(model, obs, x0, t_obs, rng)
}

/// Simulates `t_obs` observation intervals starting exactly at `x0`.
pub fn ground_truth_from(
    model: &ModelConfig,
    obs: &ObservationModel,
    x0: StateVector,
    t_obs: usize,
    rng: &mut RandomStream,
) -> Result<GroundTruth> {
    let l96 = model.lorenz96()?;
    let grid = model.time_grid()?;
    Error::check_dim("ground truth start", model.d_x, x0.dim())?;
    Error::check_dim("ground truth observation model", model.d_x, obs.state_dim())?;
    let mut states = Vec::with_capacity(t_obs + 1);
    let mut observations = Vec::with_capacity(t_obs);
    states.push(x0);
    for n in 1..=t_obs {
        let prev = &states[n - 1];
        let x = simulate_segment(
            &l96,
            prev,
            grid.obs_time(n - 1),
            grid.obs_time(n),
            grid.substeps(),
            rng,
        )?;
        let mut y = obs.project(&x)?;
        for v in &mut y {
            let z: f64 = StandardNormal.sample(rng);
            *v += obs.sigma_y() * z;
        }
        states.push(x);
        observations.push(Observation::new(y)?);
    }
    Ok(GroundTruth {
        states,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d_x: usize, d_y: usize, sigma_x: f64) -> ModelConfig {
        ModelConfig {
            d_x,
            d_y,
            forcing: 8.0,
            sigma_x,
            sigma_y: 0.5,
            sigma_v: 5e-4,
            delta: 1e-3,
            delta_obs: 0.1,
            spinup: 5.0,
        }
    }

    #[test]
    fn unperturbed_matrix_selects_distinct_coordinates() {
        let mut rng = RandomStream::from_seed(3);
        let h = generate_observation_matrix(10, 10, 0.0, &mut rng).unwrap();
        let hth = h.transpose() * &h;
        assert_eq!(hth, DMatrix::identity(10, 10));
        let mut rows: Vec<usize> = (0..10).map(|j| h.column(j).imax()).collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn perturbed_matrix_is_close_to_selection() {
        let mut rng = RandomStream::from_seed(4);
        for _ in 0..1000 {
            let h = generate_observation_matrix(10, 6, 5e-4, &mut rng).unwrap();
            let mut seen = Vec::new();
            for j in 0..6 {
                let col = h.column(j);
                let m = col.imax();
                assert!(col[m] > 0.99 && col[m] < 1.01);
                for i in (0..10).filter(|&i| i != m) {
                    assert!(col[i].abs() < 0.005);
                }
                assert!(!seen.contains(&m));
                seen.push(m);
            }
        }
        assert!(generate_observation_matrix(3, 4, 0.0, &mut rng).is_err());
    }

    #[test]
    fn fixed_point_without_noise() {
        let mut cfg = model(4, 2, 0.0);
        cfg.sigma_y = 1e-300;
        let h = generate_observation_matrix(4, 2, 0.0, &mut RandomStream::from_seed(1)).unwrap();
        let obs = ObservationModel::new(h, cfg.sigma_y).unwrap();
        let x0 = StateVector::filled(4, 8.0);
        let truth =
            ground_truth_from(&cfg, &obs, x0.clone(), 5, &mut RandomStream::from_seed(2)).unwrap();
        for x in &truth.states {
            assert_eq!(x, &x0);
        }
        let expected = obs.project(&x0).unwrap();
        for y in &truth.observations {
            assert_eq!(&y[..], &expected[..]);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = model(6, 3, 0.5);
        let make = || {
            let mut rng = RandomStream::from_seed(77);
            let h = generate_observation_matrix(6, 3, cfg.sigma_v, &mut rng).unwrap();
            let obs = ObservationModel::new(h, cfg.sigma_y).unwrap();
            generate_ground_truth(&cfg, &obs, 10, &mut rng).unwrap()
        };
        let a = make();
        let b = make();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.states.len(), 11);
        assert_eq!(a.t_obs(), 10);
    }

    #[test]
    fn climatology_is_in_range() {
        // Pilot runs of this integrator give a mean energy per coordinate near 18 for
        // F = 8; the bracket is deliberately loose.
        let cfg = model(10, 6, 0.5f64.sqrt());
        let mut rng = RandomStream::from_seed(5);
        let h = generate_observation_matrix(10, 6, cfg.sigma_v, &mut rng).unwrap();
        let obs = ObservationModel::new(h, cfg.sigma_y).unwrap();
        let truth = generate_ground_truth(&cfg, &obs, 50, &mut rng).unwrap();
        let energy = truth.states[1..]
            .iter()
            .map(|x| x.norm_squared())
            .sum::<f64>()
            / (50.0 * 10.0);
        assert!((4.0..=30.0).contains(&energy), "energy {energy}");
    }
}
