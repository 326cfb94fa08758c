//! Declarative experiment configuration, read from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{BarrierParams, Lorenz96Params, TimeGrid};

/// The filters the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Sir,
    Apf,
    Enkf,
    BarrierSir,
    BarrierEnkf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Sir,
        FilterKind::Apf,
        FilterKind::Enkf,
        FilterKind::BarrierSir,
        FilterKind::BarrierEnkf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Sir => "sir",
            FilterKind::Apf => "apf",
            FilterKind::Enkf => "enkf",
            FilterKind::BarrierSir => "barrier-sir",
            FilterKind::BarrierEnkf => "barrier-enkf",
        }
    }

    pub fn uses_barrier(self) -> bool {
        matches!(self, FilterKind::BarrierSir | FilterKind::BarrierEnkf)
    }

    pub fn is_particle_filter(self) -> bool {
        matches!(
            self,
            FilterKind::Sir | FilterKind::Apf | FilterKind::BarrierSir
        )
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter kind `{s}`")))
    }
}

fn default_forcing() -> f64 {
    8.0
}

fn default_sigma_v() -> f64 {
    5e-4
}

fn default_delta() -> f64 {
    1e-3
}

fn default_delta_obs() -> f64 {
    0.1
}

fn default_spinup() -> f64 {
    5.0
}

/// Stochastic Lorenz 96 model and observation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_y: usize,
    #[serde(default = "default_forcing")]
    pub forcing: f64,
    /// Diffusion scale; the noise covariance is `sigma_x² I`.
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Perturbation scale of the observation matrix.
    #[serde(default = "default_sigma_v")]
    pub sigma_v: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_delta_obs")]
    pub delta_obs: f64,
    /// Length of the discarded integration before `X_0`, in model time units.
    #[serde(default = "default_spinup")]
    pub spinup: f64,
}

impl ModelConfig {
    pub fn lorenz96(&self) -> Result<Lorenz96Params> {
        Lorenz96Params::new(self.d_x, self.forcing, self.sigma_x)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.delta, self.delta_obs)
    }

    pub fn validate(&self) -> Result<()> {
        self.lorenz96()?;
        self.time_grid()?;
        if self.d_y == 0 || self.d_y > self.d_x {
            return Err(Error::invalid(format!(
                "need 1 <= d_y <= d_x, got d_y = {}, d_x = {}",
                self.d_y, self.d_x
            )));
        }
        if !(self.sigma_y > 0.0) || !self.sigma_y.is_finite() {
            return Err(Error::invalid("sigma_y must be positive"));
        }
        if !(self.sigma_v >= 0.0) || !self.sigma_v.is_finite() {
            return Err(Error::invalid("sigma_v must be non-negative"));
        }
        if !(self.spinup >= 0.0) || !self.spinup.is_finite() {
            return Err(Error::invalid("spinup must be non-negative"));
        }
        Ok(())
    }
}

fn default_trials() -> usize {
    1
}

fn default_filter() -> FilterKind {
    FilterKind::BarrierSir
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of observation steps.
    pub t_obs: usize,
    /// Particles or ensemble members.
    pub n_particles: usize,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    pub seed: u64,
    #[serde(default = "default_filter")]
    pub filter: FilterKind,
}

/// Gaussian prior `N(X_0 + offset·1, variance·I)` centred relative to the true
/// initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub offset: f64,
    pub variance: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            offset: 0.0,
            variance: 1.0,
        }
    }
}

fn default_floor_multiplier() -> Option<f64> {
    Some(crate::metrics::DEFAULT_FLOOR_MULTIPLIER)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvConfig {
    pub r: f64,
    pub r_sub: f64,
    /// `None` fits every point of the curve.
    #[serde(default = "default_floor_multiplier")]
    pub floor_multiplier: Option<f64>,
}

/// One arm of the accuracy experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub filter: FilterKind,
    /// Overrides `run.n_particles`.
    #[serde(default)]
    pub n_particles: Option<usize>,
    /// Overrides the top-level barrier.
    #[serde(default)]
    pub barrier: Option<BarrierParams>,
}

fn default_sweep_filters() -> Vec<FilterKind> {
    FilterKind::ALL.to_vec()
}

fn default_obs_fraction() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    #[serde(default = "default_sweep_filters")]
    pub filters: Vec<FilterKind>,
    /// Use `N = d_x` instead of `run.n_particles`.
    #[serde(default)]
    pub scale_n: bool,
    /// `d_y = ⌊obs_fraction · d_x⌋`.
    #[serde(default = "default_obs_fraction")]
    pub obs_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priors: Vec<PriorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv: Option<TvConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arms: Vec<ArmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.run.t_obs == 0 {
            return Err(Error::invalid("t_obs must be at least 1"));
        }
        if self.run.n_particles == 0 || self.run.n_trials == 0 {
            return Err(Error::invalid("n_particles and n_trials must be positive"));
        }
        if let Some(b) = &self.barrier {
            b.validate()?;
        }
        for p in &self.priors {
            if !(p.variance > 0.0) || !p.variance.is_finite() || !p.offset.is_finite() {
                return Err(Error::invalid(
                    "prior variance must be positive and offset finite",
                ));
            }
        }
        if let Some(tv) = &self.tv {
            if !(tv.r_sub > 0.0 && tv.r >= tv.r_sub && tv.r.is_finite()) {
                return Err(Error::invalid("tv grid needs 0 < r_sub <= r"));
            }
            if let Some(m) = tv.floor_multiplier {
                if !(m >= 1.0) || !m.is_finite() {
                    return Err(Error::invalid("floor_multiplier must be >= 1"));
                }
            }
        }
        for arm in &self.arms {
            if arm.n_particles == Some(0) {
                return Err(Error::invalid(format!(
                    "arm `{}` has zero particles",
                    arm.name
                )));
            }
            if let Some(b) = &arm.barrier {
                b.validate()?;
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.dims.is_empty() || sweep.filters.is_empty() {
                return Err(Error::invalid(
                    "sweep needs at least one dimension and one filter",
                ));
            }
            if !(sweep.obs_fraction > 0.0 && sweep.obs_fraction <= 1.0) {
                return Err(Error::invalid("obs_fraction must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Barrier of the top-level section, required by the barrier filters.
    pub fn barrier_or_err(&self) -> Result<BarrierParams> {
        self.barrier
            .ok_or_else(|| Error::Config("a barrier filter needs a [barrier] section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"
[model]
d_x = 10
d_y = 6
sigma_x = 0.7071067811865476
sigma_y = 0.5

[run]
t_obs = 30
n_particles = 2048
n_trials = 32
seed = 2024

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
"#;

    #[test]
    fn defaults_are_filled_in() {
        let cfg = ExperimentConfig::from_toml(FIG1).unwrap();
        assert_eq!(cfg.model.forcing, 8.0);
        assert_eq!(cfg.model.delta, 1e-3);
        assert_eq!(cfg.model.delta_obs, 0.1);
        assert_eq!(cfg.model.sigma_v, 5e-4);
        assert_eq!(cfg.run.filter, FilterKind::BarrierSir);
        assert_eq!(cfg.tv.unwrap().floor_multiplier, Some(1.5));
        assert_eq!(cfg.priors.len(), 2);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::from_toml(FIG1).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::from_toml("[model]\nd_x = 10\n"),
            Err(Error::Config(_))
        ));
        let unknown = FIG1.replace("[tv]", "[tv]\nbogus = 1");
        assert!(matches!(
            ExperimentConfig::from_toml(&unknown),
            Err(Error::Config(_))
        ));
        let too_many_obs = FIG1.replace("d_y = 6", "d_y = 11");
        assert!(matches!(
            ExperimentConfig::from_toml(&too_many_obs),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn filter_names_parse() {
        for k in FilterKind::ALL {
            assert_eq!(k.name().parse::<FilterKind>().unwrap(), k);
        }
        assert!("kalman".parse::<FilterKind>().is_err());
    }
}
