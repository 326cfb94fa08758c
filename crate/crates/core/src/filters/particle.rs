use rand::Rng;

use super::{KernelKind, PosteriorMean, TransitionKernel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{label, RandomStream, SeedNode};
use crate::ssm::{LinearGaussianObservation, StateVector};

/// Weighted particle approximation of a filtering distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<StateVector>,
    log_weights: Vec<f64>,
    normalized: bool,
}

impl ParticleEnsemble {
    /// Equally weighted ensemble.
    pub fn uniform(particles: Vec<StateVector>) -> Result<Self> {
        let n = particles.len();
        Self::check_particles(&particles)?;
        let lw = -(n as f64).ln();
        Ok(ParticleEnsemble {
            particles,
            log_weights: vec![lw; n],
            normalized: true,
        })
    }

    /// Ensemble with arbitrary (unnormalised) log weights.
    pub fn weighted(particles: Vec<StateVector>, log_weights: Vec<f64>) -> Result<Self> {
        Self::check_particles(&particles)?;
        Error::check_dim("log weights", particles.len(), log_weights.len())?;
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(Error::NonFinite("log weight"));
        }
        Ok(ParticleEnsemble {
            particles,
            log_weights,
            normalized: false,
        })
    }

    fn check_particles(particles: &[StateVector]) -> Result<()> {
        let first = particles
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one particle"))?;
        for p in particles {
            Error::check_dim("ensemble particle", first.dim(), p.dim())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    pub fn particles(&self) -> &[StateVector] {
        &self.particles
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn into_particles(self) -> Vec<StateVector> {
        self.particles
    }

    fn require_normalized(&self) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::NotNormalized)
        }
    }
}

impl PosteriorMean for ParticleEnsemble {
    fn posterior_mean(&self) -> Result<StateVector> {
        self.require_normalized()?;
        let mut mean = vec![0.0; self.dim()];
        for (p, lw) in self.particles.iter().zip(&self.log_weights) {
            let w = lw.exp();
            if w == 0.0 {
                continue;
            }
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += w * v;
            }
        }
        Ok(StateVector::from_vec(mean))
    }
}

/// Normalises via log-sum-exp.
pub fn normalize_weights(mut e: ParticleEnsemble) -> Result<ParticleEnsemble> {
    let max = e
        .log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::TotalDegeneracy);
    }
    let sum: f64 = e.log_weights.iter().map(|w| (w - max).exp()).sum();
    let log_norm = max + sum.ln();
    for w in &mut e.log_weights {
        *w -= log_norm;
    }
    e.normalized = true;
    Ok(e)
}

/// Normalised effective sample size `1 / (N Σ wᵢ²)`, in `[1/N, 1]`.
pub fn ess(e: &ParticleEnsemble) -> Result<f64> {
    e.require_normalized()?;
    let sum_sq: f64 = e.log_weights.iter().map(|w| (2.0 * w).exp()).sum();
    let n = e.len() as f64;
    Ok((1.0 / (n * sum_sq)).clamp(1.0 / n, 1.0))
}

/// `count` i.i.d. draws from the categorical distribution with (normalised) `weights`.
pub fn multinomial_indices(weights: &[f64], count: usize, rng: &mut RandomStream) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(last_positive)
        })
        .collect()
}

pub fn multinomial_resample(
    e: &ParticleEnsemble,
    rng: &mut RandomStream,
) -> Result<ParticleEnsemble> {
    e.require_normalized()?;
    let idx = multinomial_indices(&e.weights(), e.len(), rng);
    ParticleEnsemble::uniform(idx.into_iter().map(|i| e.particles[i].clone()).collect())
}

/// One recursion of a particle filter.
#[derive(Debug, Clone)]
pub struct PfStep {
    /// Propagated particles with normalised weights, before resampling.
    pub weighted: ParticleEnsemble,
    pub ess: f64,
    /// Equally weighted output after multinomial resampling.
    pub resampled: ParticleEnsemble,
    pub kernel: KernelKind,
}

fn weight_and_resample(
    particles: Vec<StateVector>,
    log_weights: Vec<f64>,
    seed: &SeedNode,
    kernel: KernelKind,
) -> Result<PfStep> {
    let weighted = normalize_weights(ParticleEnsemble::weighted(particles, log_weights)?)?;
    let ess = ess(&weighted)?;
    let resampled = multinomial_resample(&weighted, &mut seed.child(label::RESAMPLE).stream())?;
    Ok(PfStep {
        weighted,
        ess,
        resampled,
        kernel,
    })
}

/// Bootstrap step: propagate through the kernel, weight by the likelihood,
/// normalise, resample.
///
/// Prior log weights are carried over, so for the usual equally weighted input
/// the new weights are proportional to `g(x̄ᵢ)`.
pub fn bootstrap_pf_step<K: TransitionKernel + ?Sized>(
    e: &ParticleEnsemble,
    kernel: &K,
    obs: &LinearGaussianObservation,
    seed: &SeedNode,
    exec: Execution,
) -> Result<PfStep> {
    Error::check_dim("bootstrap_pf_step", obs.model().state_dim(), e.dim())?;
    let moved = exec.try_map_slots(e.len(), |i| {
        let x = kernel.sample(&e.particles[i], &mut seed.slot(i).stream())?;
        let lw = e.log_weights[i] + obs.log_likelihood_unchecked(&x);
        Ok::<_, Error>((x, lw))
    })?;
    let (particles, log_weights): (Vec<_>, Vec<_>) = moved.into_iter().unzip();
    weight_and_resample(particles, log_weights, seed, kernel.kind())
}

/// Two-stage auxiliary particle filter step.
///
/// First-stage weights `λᵢ ∝ wᵢ g(m(xᵢ))` use a point prediction `m`; ancestors are
/// drawn from `λ`, propagated through the kernel, and reweighted by
/// `g(x̄ᵢ) / g(m(x_{aᵢ}))` before the final resampling.
pub fn apf_step<K, M>(
    e: &ParticleEnsemble,
    predictive_mean: M,
    kernel: &K,
    obs: &LinearGaussianObservation,
    seed: &SeedNode,
    exec: Execution,
) -> Result<PfStep>
where
    K: TransitionKernel + ?Sized,
    M: Fn(&StateVector) -> Result<StateVector> + Sync + Send,
{
    Error::check_dim("apf_step", obs.model().state_dim(), e.dim())?;
    let first_ll = exec.try_map_slots(e.len(), |i| {
        predictive_mean(&e.particles[i]).map(|m| obs.log_likelihood_unchecked(&m))
    })?;
    let first_lw: Vec<f64> = first_ll
        .iter()
        .zip(&e.log_weights)
        .map(|(ll, lw)| ll + lw)
        .collect();
    let first = normalize_weights(ParticleEnsemble::weighted(e.particles.clone(), first_lw)?)?;
    let ancestors = multinomial_indices(
        &first.weights(),
        e.len(),
        &mut seed.child(label::FIRST_STAGE).stream(),
    );
    let moved = exec.try_map_slots(e.len(), |i| {
        let a = ancestors[i];
        let x = kernel.sample(&e.particles[a], &mut seed.slot(i).stream())?;
        let lw = obs.log_likelihood_unchecked(&x) - first_ll[a];
        Ok::<_, Error>((x, lw))
    })?;
    let (particles, log_weights): (Vec<_>, Vec<_>) = moved.into_iter().unzip();
    weight_and_resample(particles, log_weights, seed, kernel.kind())
}
