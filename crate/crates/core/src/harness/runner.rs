//! Per-trial setup and a step-by-step driver for each filter kind.

use nalgebra::DMatrix;

use super::config::{FilterKind, ModelConfig, PriorConfig};
use super::truth::{generate_ground_truth, generate_observation_matrix, GroundTruth};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filters::{
    apf_step, bootstrap_pf_step, enkf_analysis, enkf_forecast, posterior_mean, BarrierKernel,
    EnkfEnsemble, ParticleEnsemble, SdeKernel, TransitionKernel,
};
use crate::rng::{label, SeedNode};
use crate::sde::{integrate_drift, BarrierParams, BarrierSpec, Lorenz96Params, TimeGrid};
use crate::ssm::{
    sample_prior, GaussianPrior, LinearGaussianObservation, ObservationModel, StateVector,
};

/// Everything the filters of one trial share: model, observation matrix and the
/// simulated data.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub model: ModelConfig,
    pub l96: Lorenz96Params,
    pub grid: TimeGrid,
    pub obs_model: ObservationModel,
    pub truth: GroundTruth,
}

impl TrialSetup {
    /// Draws `H` from the `MATRIX` child of `seed` and the trajectory from its
    /// `TRUTH` child.
    pub fn generate(model: &ModelConfig, t_obs: usize, seed: &SeedNode) -> Result<Self> {
        model.validate()?;
        let h = generate_observation_matrix(
            model.d_x,
            model.d_y,
            model.sigma_v,
            &mut seed.child(label::MATRIX).stream(),
        )?;
        let obs_model = ObservationModel::new(h, model.sigma_y)?;
        let truth = generate_ground_truth(
            model,
            &obs_model,
            t_obs,
            &mut seed.child(label::TRUTH).stream(),
        )?;
        Ok(TrialSetup {
            model: model.clone(),
            l96: model.lorenz96()?,
            grid: model.time_grid()?,
            obs_model,
            truth,
        })
    }

    pub fn t_obs(&self) -> usize {
        self.truth.t_obs()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        self.obs_model.h()
    }

    /// Likelihood of step `n ≥ 1`.
    pub fn observation(&self, n: usize) -> Result<LinearGaussianObservation> {
        let y = self.datum(n)?;
        self.obs_model.with_datum(y.clone())
    }

    fn datum(&self, n: usize) -> Result<&crate::ssm::Observation> {
        if n == 0 || n > self.t_obs() {
            return Err(Error::invalid(format!(
                "observation index {n} outside 1..={}",
                self.t_obs()
            )));
        }
        Ok(&self.truth.observations[n - 1])
    }

    /// Barrier over `[t_{n−1}, t_n]`. There is no `y_0`, so the first interval holds
    /// `y_1` fixed.
    pub fn barrier_spec(&self, n: usize, params: BarrierParams) -> Result<BarrierSpec> {
        let y_next = self.datum(n)?.clone();
        let y_prev = if n == 1 {
            y_next.clone()
        } else {
            self.datum(n - 1)?.clone()
        };
        BarrierSpec::new(
            params,
            self.obs_model.clone(),
            y_prev,
            y_next,
            self.grid.obs_time(n - 1),
            self.grid.obs_time(n),
        )
    }

    pub fn prior(&self, p: &PriorConfig) -> Result<GaussianPrior> {
        GaussianPrior::new(self.truth.states[0].offset(p.offset), p.variance)
    }
}

/// Which filter to run and with how many particles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub n_particles: usize,
    pub barrier: Option<BarrierParams>,
}

impl FilterSpec {
    pub fn new(
        kind: FilterKind,
        n_particles: usize,
        barrier: Option<BarrierParams>,
    ) -> Result<Self> {
        if kind.uses_barrier() && barrier.is_none() {
            return Err(Error::Config(format!(
                "filter `{kind}` needs barrier parameters"
            )));
        }
        let min = if kind.is_particle_filter() { 1 } else { 2 };
        if n_particles < min {
            return Err(Error::invalid(format!(
                "filter `{kind}` needs at least {min} particles, got {n_particles}"
            )));
        }
        Ok(FilterSpec {
            kind,
            n_particles,
            barrier,
        })
    }
}

#[derive(Debug, Clone)]
enum FilterState {
    Particles(ParticleEnsemble),
    Ensemble(EnkfEnsemble),
}

/// Output of one assimilation step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub n: usize,
    pub mean: StateVector,
    /// Normalised ESS of the particle weights; `None` for ensemble Kalman filters.
    pub ess: Option<f64>,
    /// Weighted particles before resampling.
    pub weighted: Option<ParticleEnsemble>,
}

/// Runs one filter through the observations of a trial, one step at a time.
pub struct FilterRunner<'a> {
    setup: &'a TrialSetup,
    spec: FilterSpec,
    seed: SeedNode,
    exec: Execution,
    state: FilterState,
    step: usize,
}

impl<'a> FilterRunner<'a> {
    /// Initial particles are drawn from `prior` with the `PRIOR` child of `seed`, so
    /// filters given the same seed and prior start from identical ensembles.
    pub fn new(
        setup: &'a TrialSetup,
        spec: FilterSpec,
        prior: &GaussianPrior,
        seed: SeedNode,
        exec: Execution,
    ) -> Result<Self> {
        Error::check_dim("filter prior", setup.model.d_x, prior.mean().dim())?;
        let prior_seed = seed.child(label::PRIOR);
        let members = exec.map_slots(spec.n_particles, |i| {
            sample_prior(prior, &mut prior_seed.slot(i).stream())
        });
        let state = if spec.kind.is_particle_filter() {
            FilterState::Particles(ParticleEnsemble::uniform(members)?)
        } else {
            FilterState::Ensemble(EnkfEnsemble::new(members)?)
        };
        Ok(FilterRunner {
            setup,
            spec,
            seed,
            exec,
            state,
            step: 0,
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Current equally weighted particle set, for particle filters.
    pub fn particles(&self) -> Option<&ParticleEnsemble> {
        match &self.state {
            FilterState::Particles(p) => Some(p),
            FilterState::Ensemble(_) => None,
        }
    }

    pub fn advance(&mut self) -> Result<StepOutput> {
        let n = self.step + 1;
        let setup = self.setup;
        let obs = setup.observation(n)?;
        let step_seed = self.seed.step(n);
        let (t0, t1) = (setup.grid.obs_time(n - 1), setup.grid.obs_time(n));

        let plain;
        let guided;
        let kernel: &dyn TransitionKernel =
            match self.spec.barrier.filter(|_| self.spec.kind.uses_barrier()) {
                Some(params) => {
                    guided =
                        BarrierKernel::new(&setup.l96, setup.barrier_spec(n, params)?, setup.grid)?;
                    &guided
                }
                None => {
                    plain = SdeKernel::new(&setup.l96, t0, t1, setup.grid.substeps())?;
                    &plain
                }
            };

        let out = match (&self.state, self.spec.kind) {
            (FilterState::Particles(e), FilterKind::Apf) => {
                let predict =
                    |x: &StateVector| integrate_drift(&setup.l96, x, t0, t1, setup.grid.substeps());
                let step = apf_step(e, predict, kernel, &obs, &step_seed, self.exec)?;
                let mean = posterior_mean(&step.weighted)?;
                self.state = FilterState::Particles(step.resampled);
                StepOutput {
                    n,
                    mean,
                    ess: Some(step.ess),
                    weighted: Some(step.weighted),
                }
            }
            (FilterState::Particles(e), _) => {
                let step = bootstrap_pf_step(e, kernel, &obs, &step_seed, self.exec)?;
                let mean = posterior_mean(&step.weighted)?;
                self.state = FilterState::Particles(step.resampled);
                StepOutput {
                    n,
                    mean,
                    ess: Some(step.ess),
                    weighted: Some(step.weighted),
                }
            }
            (FilterState::Ensemble(e), _) => {
                let forecast = enkf_forecast(e, kernel, &step_seed, self.exec)?;
                let analysis = enkf_analysis(&forecast, &obs, &step_seed, self.exec)?;
                let mean = posterior_mean(&analysis.ensemble)?;
                self.state = FilterState::Ensemble(analysis.ensemble);
                StepOutput {
                    n,
                    mean,
                    ess: None,
                    weighted: None,
                }
            }
        };
        self.step = n;
        Ok(out)
    }
}

/// Per-step output of one filter over a whole trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub name: String,
    pub means: Vec<StateVector>,
    pub ess: Option<Vec<f64>>,
    pub nmse: Vec<f64>,
}

/// Runs a filter over every observation of the trial.
pub fn run_filter(
    name: &str,
    setup: &TrialSetup,
    spec: FilterSpec,
    prior: &GaussianPrior,
    seed: SeedNode,
    exec: Execution,
) -> Result<FilterTrace> {
    let mut runner = FilterRunner::new(setup, spec, prior, seed, exec)?;
    let mut means = Vec::with_capacity(setup.t_obs());
    let mut ess = Vec::with_capacity(setup.t_obs());
    for _ in 0..setup.t_obs() {
        let out = runner.advance()?;
        means.push(out.mean);
        if let Some(e) = out.ess {
            ess.push(e);
        }
    }
    finish_trace(name, setup, spec.kind, means, ess)
}

pub(crate) fn finish_trace(
    name: &str,
    setup: &TrialSetup,
    kind: FilterKind,
    means: Vec<StateVector>,
    ess: Vec<f64>,
) -> Result<FilterTrace> {
    let nmse = crate::metrics::nmse_curve(&setup.truth.states[1..], &means)?;
    Ok(FilterTrace {
        name: name.to_string(),
        means,
        ess: kind.is_particle_filter().then_some(ess),
        nmse,
    })
}
