//! The stability, accuracy and dimension-sweep experiments.

use std::time::{Duration, Instant};

use super::config::{ExperimentConfig, FilterKind, PriorConfig};
use super::runner::{finish_trace, run_filter, FilterRunner, FilterSpec, FilterTrace, TrialSetup};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{fit_gamma, tv_discretized, DecayFit, HypercubeGrid, TvCurve};
use crate::rng::{label, SeedNode};

/// Outcome of one trial of an experiment.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    /// Key of the trial's seed node.
    pub seed: u64,
    pub truth_fingerprint: u64,
    pub arms: Vec<FilterTrace>,
    /// TV between the twin filters, index 0 being the priors.
    pub tv: Option<Vec<f64>>,
    pub duration: Duration,
}

fn trial_seed(cfg: &ExperimentConfig, k: usize) -> SeedNode {
    SeedNode::new(cfg.run.seed).child(label::TRIALS).trial(k)
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn particle_spec(cfg: &ExperimentConfig, kind: FilterKind) -> Result<FilterSpec> {
    let barrier = if kind.uses_barrier() {
        Some(cfg.barrier_or_err()?)
    } else {
        None
    };
    FilterSpec::new(kind, cfg.run.n_particles, barrier)
}

#[derive(Debug, Clone)]
pub struct TvDecayResult {
    pub curve: TvCurve,
    /// Mean TV between the two initial ensembles.
    pub d0: f64,
    pub fit: Result<DecayFit>,
    pub trials: Vec<TrialResult>,
}

/// Twin filters started from the two configured priors, run on common random
/// numbers; TV is measured on a grid recentred at the true state every step.
pub fn run_tv_decay_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<TvDecayResult> {
    cfg.validate()?;
    let tv_cfg = cfg
        .tv
        .ok_or_else(|| Error::Config("the TV experiment needs a [tv] section".into()))?;
    if cfg.priors.len() != 2 {
        return Err(Error::Config(format!(
            "the TV experiment needs exactly 2 priors, got {}",
            cfg.priors.len()
        )));
    }
    let kind = cfg.run.filter;
    if !kind.is_particle_filter() {
        return Err(Error::Config(format!(
            "the TV experiment needs a particle filter, got `{kind}`"
        )));
    }
    let spec = particle_spec(cfg, kind)?;

    let trials = exec.try_map_slots(cfg.run.n_trials, |k| {
        let started = Instant::now();
        let seed = trial_seed(cfg, k);
        let setup = TrialSetup::generate(&cfg.model, cfg.run.t_obs, &seed)?;
        let filter_seed = seed.child(label::FILTER);
        let prior_a = setup.prior(&cfg.priors[0])?;
        let prior_b = setup.prior(&cfg.priors[1])?;
        let mut a = FilterRunner::new(&setup, spec, &prior_a, filter_seed, exec)?;
        let mut b = FilterRunner::new(&setup, spec, &prior_b, filter_seed, exec)?;

        let tv_at = |n: usize,
                     x: &crate::filters::ParticleEnsemble,
                     y: &crate::filters::ParticleEnsemble| {
            let grid = HypercubeGrid::new(setup.truth.states[n].clone(), tv_cfg.r, tv_cfg.r_sub)?;
            tv_discretized(&grid, x, y)
        };
        let mut tv = Vec::with_capacity(cfg.run.t_obs + 1);
        tv.push(tv_at(0, a.particles().unwrap(), b.particles().unwrap())?);
        let (mut means_a, mut means_b) = (Vec::new(), Vec::new());
        let (mut ess_a, mut ess_b) = (Vec::new(), Vec::new());
        for n in 1..=cfg.run.t_obs {
            let oa = a.advance()?;
            let ob = b.advance()?;
            let (wa, wb) = (oa.weighted.as_ref().unwrap(), ob.weighted.as_ref().unwrap());
            tv.push(tv_at(n, wa, wb)?);
            means_a.push(oa.mean);
            means_b.push(ob.mean);
            ess_a.extend(oa.ess);
            ess_b.extend(ob.ess);
        }
        Ok::<_, Error>(TrialResult {
            trial: k,
            seed: seed.key(),
            truth_fingerprint: setup.truth.fingerprint(),
            arms: vec![
                finish_trace("A", &setup, kind, means_a, ess_a)?,
                finish_trace("B", &setup, kind, means_b, ess_b)?,
            ],
            tv: Some(tv),
            duration: started.elapsed(),
        })
    })?;

    let runs: Vec<Vec<f64>> = trials.iter().map(|t| t.tv.clone().unwrap()).collect();
    let curve = TvCurve::from_runs(&runs)?;
    let d0 = curve.values[0];
    let fit = if d0 > 0.0 {
        fit_gamma(&curve, d0, tv_cfg.floor_multiplier)
    } else {
        Err(Error::InsufficientDecay { n_cut: 0 })
    };
    Ok(TvDecayResult {
        curve,
        d0,
        fit,
        trials,
    })
}

/// Arms of the accuracy experiment; a single arm from `run.filter` when none are
/// configured.
pub fn nmse_arms(cfg: &ExperimentConfig) -> Result<Vec<(String, FilterSpec)>> {
    if cfg.arms.is_empty() {
        let kind = cfg.run.filter;
        return Ok(vec![(kind.name().to_string(), particle_spec(cfg, kind)?)]);
    }
    cfg.arms
        .iter()
        .map(|arm| {
            let barrier = if arm.filter.uses_barrier() {
                Some(arm.barrier.map_or_else(|| cfg.barrier_or_err(), Ok)?)
            } else {
                None
            };
            let n = arm.n_particles.unwrap_or(cfg.run.n_particles);
            Ok((arm.name.clone(), FilterSpec::new(arm.filter, n, barrier)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NmseResult {
    pub arms: Vec<String>,
    /// `mean[a][n − 1]` is the trial-averaged NMSE of arm `a` at step `n`.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub trials: Vec<TrialResult>,
}

impl NmseResult {
    /// Mean over steps `from..=to` (1-based, inclusive) of arm `a`'s averaged curve.
    pub fn time_mean(&self, a: usize, from: usize, to: usize) -> f64 {
        let slice = &self.mean[a][from - 1..to];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Every arm runs on the same ground truth and observations, and with the same
/// filter seed, within a trial.
pub fn run_nmse_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<NmseResult> {
    cfg.validate()?;
    let arms = nmse_arms(cfg)?;
    let prior_cfg = cfg.priors.first().copied().unwrap_or_default();
    let trials = exec.try_map_slots(cfg.run.n_trials, |k| {
        let started = Instant::now();
        let seed = trial_seed(cfg, k);
        let setup = TrialSetup::generate(&cfg.model, cfg.run.t_obs, &seed)?;
        let prior = setup.prior(&prior_cfg)?;
        let traces = arms
            .iter()
            .map(|(name, spec)| {
                run_filter(name, &setup, *spec, &prior, seed.child(label::FILTER), exec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>(TrialResult {
            trial: k,
            seed: seed.key(),
            truth_fingerprint: setup.truth.fingerprint(),
            arms: traces,
            tv: None,
            duration: started.elapsed(),
        })
    })?;

    let t = cfg.run.t_obs;
    let mut mean = vec![vec![0.0; t]; arms.len()];
    let mut stderr = vec![vec![0.0; t]; arms.len()];
    for a in 0..arms.len() {
        for n in 0..t {
            let samples: Vec<f64> = trials.iter().map(|tr| tr.arms[a].nmse[n]).collect();
            (mean[a][n], stderr[a][n]) = mean_and_stderr(&samples);
        }
    }
    Ok(NmseResult {
        arms: arms.into_iter().map(|(name, _)| name).collect(),
        mean,
        stderr,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub d_x: usize,
    pub filter: FilterKind,
    pub n_particles: usize,
    /// Trial average of the time-mean NMSE.
    pub nmse_mean: f64,
    pub nmse_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<(usize, TrialResult)>,
}

impl SweepResult {
    pub fn get(&self, d_x: usize, filter: FilterKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.d_x == d_x && r.filter == filter)
    }
}

/// For each dimension: fresh `H` per trial with `d_y = ⌊obs_fraction·d_x⌋`, every
/// configured filter on the same data, time-mean NMSE averaged over trials.
pub fn run_dimension_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<SweepResult> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("the dimension sweep needs a [sweep] section".into()))?;
    let prior_cfg: PriorConfig = cfg.priors.first().copied().unwrap_or_default();
    let mut rows = Vec::new();
    let mut all_trials = Vec::new();
    for &d_x in &sweep.dims {
        let mut model = cfg.model.clone();
        model.d_x = d_x;
        model.d_y = ((sweep.obs_fraction * d_x as f64).floor() as usize).max(1);
        let n = if sweep.scale_n {
            d_x
        } else {
            cfg.run.n_particles
        };
        let specs = sweep
            .filters
            .iter()
            .map(|&kind| {
                let barrier = if kind.uses_barrier() {
                    Some(cfg.barrier_or_err()?)
                } else {
                    None
                };
                FilterSpec::new(kind, n, barrier)
            })
            .collect::<Result<Vec<_>>>()?;
        let dim_seed = SeedNode::new(cfg.run.seed).child(d_x as u64);
        let trials = exec.try_map_slots(cfg.run.n_trials, |k| {
            let started = Instant::now();
            let seed = dim_seed.child(label::TRIALS).trial(k);
            let setup = TrialSetup::generate(&model, cfg.run.t_obs, &seed)?;
            let prior = setup.prior(&prior_cfg)?;
            let traces = specs
                .iter()
                .map(|spec| {
                    run_filter(
                        spec.kind.name(),
                        &setup,
                        *spec,
                        &prior,
                        seed.child(label::FILTER),
                        exec,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok::<_, Error>(TrialResult {
                trial: k,
                seed: seed.key(),
                truth_fingerprint: setup.truth.fingerprint(),
                arms: traces,
                tv: None,
                duration: started.elapsed(),
            })
        })?;
        for (f, spec) in specs.iter().enumerate() {
            let samples: Vec<f64> = trials
                .iter()
                .map(|tr| tr.arms[f].nmse.iter().sum::<f64>() / tr.arms[f].nmse.len() as f64)
                .collect();
            let (nmse_mean, nmse_stderr) = mean_and_stderr(&samples);
            rows.push(SweepRow {
                d_x,
                filter: spec.kind,
                n_particles: n,
                nmse_mean,
                nmse_stderr,
            });
        }
        all_trials.extend(trials.into_iter().map(|t| (d_x, t)));
    }
    Ok(SweepResult {
        rows,
        trials: all_trials,
    })
}

/// Ground truth of trial 0, as used by the other experiments with the same seed.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<TrialSetup> {
    cfg.validate()?;
    TrialSetup::generate(&cfg.model, cfg.run.t_obs, &trial_seed(cfg, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[model]
d_x = 5
d_y = 3
sigma_x = 0.7071067811865476
sigma_y = 0.5
delta = 0.01
spinup = 1.0

[run]
t_obs = 6
n_particles = 128
n_trials = 3
seed = 11

[barrier]
rho = 2.0
kappa = 1.0
mu = 10.0

[[priors]]
offset = -1.0
variance = 0.25

[[priors]]
offset = 1.0
variance = 4.0

[tv]
r = 6.0
r_sub = 3.0

[[arms]]
name = "sir"
filter = "sir"

[[arms]]
name = "barrier"
filter = "barrier-sir"

[sweep]
dims = [5, 8]
filters = ["sir", "enkf", "barrier-enkf"]
"#;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_toml(SMALL).unwrap()
    }

    #[test]
    fn identical_priors_give_zero_distance() {
        let mut cfg = small();
        cfg.priors[1] = cfg.priors[0];
        let out = run_tv_decay_experiment(&cfg, Execution::Parallel).unwrap();
        assert!(out.curve.values.iter().all(|v| *v == 0.0));
        assert!(out.fit.is_err());
    }

    #[test]
    fn tv_values_are_bounded_and_start_high() {
        let out = run_tv_decay_experiment(&small(), Execution::Parallel).unwrap();
        assert_eq!(out.curve.values.len(), 7);
        assert!(out.curve.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out.d0 > 0.5, "d0 {}", out.d0);
        for t in &out.trials {
            assert_eq!(t.arms.len(), 2);
            for arm in &t.arms {
                assert!(arm
                    .ess
                    .as_ref()
                    .unwrap()
                    .iter()
                    .all(|e| *e > 0.0 && *e <= 1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn arms_share_ground_truth() {
        let cfg = small();
        let out = run_nmse_experiment(&cfg, Execution::Parallel).unwrap();
        assert_eq!(out.arms, vec!["sir", "barrier"]);
        let sim = run_simulation(&cfg).unwrap();
        assert_eq!(out.trials[0].truth_fingerprint, sim.truth.fingerprint());
        let tv = run_tv_decay_experiment(&cfg, Execution::Parallel).unwrap();
        for (a, b) in out.trials.iter().zip(&tv.trials) {
            assert_eq!(a.truth_fingerprint, b.truth_fingerprint);
        }
    }

    #[test]
    fn reference_against_itself_is_identical() {
        let mut cfg = small();
        cfg.arms[1] = cfg.arms[0].clone();
        cfg.arms[1].name = "copy".into();
        let out = run_nmse_experiment(&cfg, Execution::Parallel).unwrap();
        assert_eq!(out.mean[0], out.mean[1]);
    }

    #[test]
    fn single_dimension_sweep_matches_nmse_time_mean() {
        let mut cfg = small();
        let d = cfg.model.d_x;
        cfg.sweep = Some(crate::harness::SweepConfig {
            dims: vec![d],
            filters: vec![FilterKind::Sir],
            scale_n: false,
            obs_fraction: 0.6,
        });
        let sweep = run_dimension_sweep(&cfg, Execution::Parallel).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        let row = &sweep.rows[0];
        // Recompute from the per-trial traces.
        let per_trial: Vec<f64> = sweep
            .trials
            .iter()
            .map(|(_, t)| t.arms[0].nmse.iter().sum::<f64>() / t.arms[0].nmse.len() as f64)
            .collect();
        let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
        assert!((row.nmse_mean - mean).abs() <= 1e-15 * mean.abs().max(1.0));
    }

    #[test]
    fn sweep_covers_every_dimension_and_filter() {
        let out = run_dimension_sweep(&small(), Execution::Parallel).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows.iter().all(|r| r.nmse_mean >= 0.0));
        assert!(out.get(8, FilterKind::BarrierEnkf).is_some());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = small();
        let a = run_tv_decay_experiment(&cfg, Execution::Sequential).unwrap();
        let b = run_tv_decay_experiment(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a.curve, b.curve);
    }
}
