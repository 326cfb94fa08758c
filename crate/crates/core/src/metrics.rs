//! Filter diagnostics: hypercube-discretised total variation, NMSE and the fit of
//! the contraction constant `γ` in the stability bound
//! `d_TV(n) ≤ (1 − γ²)ⁿ / γ² · d_TV(0)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::ParticleEnsemble;
use crate::ssm::StateVector;

/// Uniform partition of the cube `‖x − center‖_∞ ≤ r_sub·⌊r/r_sub⌋` into
/// `⌊r/r_sub⌋^{d_x}` cells of semi-length `r_sub`.
///
/// Cells are half-open `[low, high)` per coordinate, except the topmost cell of each
/// coordinate which is closed, so the cells partition the cube exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HypercubeGrid {
    center: StateVector,
    r: f64,
    r_sub: f64,
    cells_per_dim: usize,
}

impl HypercubeGrid {
    pub fn new(center: StateVector, r: f64, r_sub: f64) -> Result<Self> {
        if !(r_sub > 0.0) || !(r >= r_sub) || !r.is_finite() {
            return Err(Error::invalid(format!(
                "hypercube grid needs 0 < r_sub <= r, got r = {r}, r_sub = {r_sub}"
            )));
        }
        let cells_per_dim = (r / r_sub).floor() as usize;
        let total = (cells_per_dim as u128).checked_pow(center.dim() as u32);
        if total.is_none() {
            return Err(Error::invalid(
                "hypercube cell count overflows a 128-bit index",
            ));
        }
        Ok(HypercubeGrid {
            center,
            r,
            r_sub,
            cells_per_dim,
        })
    }

    pub fn center(&self) -> &StateVector {
        &self.center
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn r_sub(&self) -> f64 {
        self.r_sub
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells_per_dim
    }

    pub fn cell_count(&self) -> u128 {
        (self.cells_per_dim as u128).pow(self.center.dim() as u32)
    }

    /// Half-width of the partitioned cube.
    pub fn half_width(&self) -> f64 {
        self.r_sub * self.cells_per_dim as f64
    }

    /// Mixed-radix cell index of `x`, or `None` when `x` lies outside the cube.
    pub fn cell_index(&self, x: &[f64]) -> Option<u128> {
        if x.len() != self.center.dim() {
            return None;
        }
        let k = self.cells_per_dim;
        let width = 2.0 * self.r_sub;
        let span = 2.0 * self.half_width();
        let mut index: u128 = 0;
        for (xi, ci) in x.iter().zip(self.center.iter()) {
            let offset = xi - (ci - self.half_width());
            if !(offset >= 0.0 && offset <= span) {
                return None;
            }
            let cell = ((offset / width).floor() as usize).min(k - 1);
            index = index * k as u128 + cell as u128;
        }
        Some(index)
    }
}

pub fn cell_index(g: &HypercubeGrid, x: &StateVector) -> Option<u128> {
    g.cell_index(x)
}

/// `½ Σ_cells |α(cell) − β(cell)|` for two normalised particle ensembles.
///
/// Mass falling outside the cube is dropped, so the value can underestimate the
/// distance when much mass escapes.
pub fn tv_discretized(
    g: &HypercubeGrid,
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
) -> Result<f64> {
    if !a.is_normalized() || !b.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Error::check_dim("tv_discretized", g.center.dim(), a.dim())?;
    Error::check_dim("tv_discretized", g.center.dim(), b.dim())?;
    let mut masses: BTreeMap<u128, (f64, f64)> = BTreeMap::new();
    for (p, lw) in a.particles().iter().zip(a.log_weights()) {
        if let Some(c) = g.cell_index(p) {
            masses.entry(c).or_default().0 += lw.exp();
        }
    }
    for (p, lw) in b.particles().iter().zip(b.log_weights()) {
        if let Some(c) = g.cell_index(p) {
            masses.entry(c).or_default().1 += lw.exp();
        }
    }
    let tv = 0.5 * masses.values().map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

/// `NMSE_n = T ‖X_n − x̂_n‖² / Σ_m ‖X_m‖²`.
pub fn nmse_curve(truth: &[StateVector], estimates: &[StateVector]) -> Result<Vec<f64>> {
    Error::check_dim("nmse_curve", truth.len(), estimates.len())?;
    if truth.is_empty() {
        return Err(Error::invalid("NMSE needs at least one step"));
    }
    let power: f64 = truth.iter().map(|x| x.norm_squared()).sum();
    if power == 0.0 {
        return Err(Error::UndefinedNormalization);
    }
    let t = truth.len() as f64;
    truth
        .iter()
        .zip(estimates)
        .map(|(x, e)| {
            Error::check_dim("nmse_curve", x.dim(), e.dim())?;
            Ok(t * x.distance_squared(e) / power)
        })
        .collect()
}

/// Averaged TV distances indexed by observation step (index 0 is the prior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvCurve {
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_runs: usize,
}

impl TvCurve {
    pub fn new(values: Vec<f64>, stderr: Vec<f64>, n_runs: usize) -> Result<Self> {
        Error::check_dim("TV curve stderr", values.len(), stderr.len())?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("TV values must lie in [0, 1]"));
        }
        Ok(TvCurve {
            values,
            stderr,
            n_runs,
        })
    }

    /// Mean and standard error across runs, step by step.
    pub fn from_runs(runs: &[Vec<f64>]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::invalid("TV curve needs at least one run"))?;
        let len = first.len();
        for r in runs {
            Error::check_dim("TV run length", len, r.len())?;
        }
        let k = runs.len() as f64;
        let mut values = Vec::with_capacity(len);
        let mut stderr = Vec::with_capacity(len);
        for n in 0..len {
            let m = runs.iter().map(|r| r[n]).sum::<f64>() / k;
            let se = if runs.len() > 1 {
                (runs.iter().map(|r| (r[n] - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt()
            } else {
                0.0
            };
            values.push(m.clamp(0.0, 1.0));
            stderr.push(se);
        }
        TvCurve::new(values, stderr, runs.len())
    }

    /// Mean of the final 20% of the curve (at least one point).
    pub fn tail_floor(&self) -> f64 {
        tail_mean(&self.values)
    }
}

fn tail_mean(values: &[f64]) -> f64 {
    let k = ((values.len() as f64) * 0.2).ceil().max(1.0) as usize;
    let tail = &values[values.len() - k..];
    tail.iter().sum::<f64>() / k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma_hat: f64,
    pub d0: f64,
    pub n_cut: usize,
    /// Root-mean-square log residual over the fitted points.
    pub rms_log_residual: f64,
}

pub const DEFAULT_FLOOR_MULTIPLIER: f64 = 1.5;

/// Least-squares fit of `γ` in `log vₙ ≈ n log(1 − γ²) − 2 log γ + log d0` over
/// `n ≤ n_cut`.
///
/// With `floor_multiplier = Some(m)`, `n_cut` is the last index whose value exceeds
/// `m` times the tail floor (mean of the final 20% of the curve); with `None` every
/// point is used. Non-positive values are skipped.
pub fn fit_gamma(curve: &TvCurve, d0: f64, floor_multiplier: Option<f64>) -> Result<DecayFit> {
    fit_gamma_values(&curve.values, d0, floor_multiplier)
}

pub fn fit_gamma_values(
    values: &[f64],
    d0: f64,
    floor_multiplier: Option<f64>,
) -> Result<DecayFit> {
    if values.len() < 3 {
        return Err(Error::invalid("fit needs at least 3 points"));
    }
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(Error::invalid(format!("d0 must be positive, got {d0}")));
    }
    let n_cut = match floor_multiplier {
        None => values.len() - 1,
        Some(m) => {
            let threshold = m * tail_mean(values);
            values
                .iter()
                .rposition(|&v| v > threshold)
                .ok_or(Error::InsufficientDecay { n_cut: 0 })?
        }
    };
    let points: Vec<(f64, f64)> = values[..=n_cut]
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(n, &v)| (n as f64, v.ln() - d0.ln()))
        .collect();
    if n_cut < 2 || points.len() < 2 {
        return Err(Error::InsufficientDecay { n_cut });
    }
    let objective = |gamma: f64| -> f64 {
        let a = (1.0 - gamma * gamma).ln();
        let b = -2.0 * gamma.ln();
        points
            .iter()
            .map(|(n, lv)| {
                let r = lv - (n * a + b);
                r * r
            })
            .sum()
    };
    let gamma_hat = minimize_on_unit_interval(objective);
    let rms = (objective(gamma_hat) / points.len() as f64).sqrt();
    Ok(DecayFit {
        gamma_hat,
        d0,
        n_cut,
        rms_log_residual: rms,
    })
}

/// Coarse scan followed by golden-section refinement of the best bracket.
fn minimize_on_unit_interval<F: Fn(f64) -> f64>(f: F) -> f64 {
    const GRID: usize = 2000;
    let lo = 1e-9;
    let hi = 1.0 - 1e-12;
    let step = (hi - lo) / GRID as f64;
    let at = |k: usize| lo + k as f64 * step;
    let best = (0..=GRID)
        .min_by(|&i, &j| f(at(i)).total_cmp(&f(at(j))))
        .unwrap_or(0);
    let mut a = at(best.saturating_sub(1));
    let mut b = at((best + 1).min(GRID));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{multinomial_resample, normalize_weights};
    use crate::rng::RandomStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn one_dimensional_cells() {
        let g = HypercubeGrid::new(sv(&[0.0]), 6.0, 3.0).unwrap();
        assert_eq!(g.cell_count(), 2);
        assert_eq!(g.cell_index(&[-1.0]), Some(0));
        assert_eq!(g.cell_index(&[0.0]), Some(1));
        assert_eq!(g.cell_index(&[-6.0]), Some(0));
        assert_eq!(g.cell_index(&[6.0]), Some(1));
        assert_eq!(g.cell_index(&[6.0 + 1e-9]), None);
        assert_eq!(g.cell_index(&[-7.0]), None);
    }

    #[test]
    fn center_and_outside_points() {
        let g = HypercubeGrid::new(sv(&[1.0, 2.0, 3.0]), 6.0, 3.0).unwrap();
        assert!(g.cell_index(&[1.0, 2.0, 3.0]).is_some());
        assert_eq!(g.cell_index(&[1.0, 9.0, 3.0]), None);
        assert!(HypercubeGrid::new(sv(&[0.0]), 1.0, 2.0).is_err());
        assert!(HypercubeGrid::new(StateVector::zeros(200), 6.0, 1.0).is_err());
    }

    #[test]
    fn cells_partition_the_cube() {
        let g = HypercubeGrid::new(sv(&[0.5, -0.5]), 7.0, 2.0).unwrap();
        assert_eq!(g.cells_per_dim(), 3);
        let mut seen = std::collections::HashSet::new();
        let mut rng = RandomStream::from_seed(1);
        for _ in 0..20_000 {
            let x = [rng.random_range(-5.5..6.5), rng.random_range(-6.5..5.5)];
            let c = g.cell_index(&x).expect("inside");
            assert!(c < g.cell_count());
            seen.insert(c);
        }
        assert_eq!(seen.len(), 9);
    }

    fn ens(xs: &[f64], w: &[f64]) -> ParticleEnsemble {
        normalize_weights(
            ParticleEnsemble::weighted(
                xs.iter().map(|&x| sv(&[x])).collect(),
                w.iter().map(|v| v.ln()).collect(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn tv_examples() {
        let g = HypercubeGrid::new(sv(&[0.0]), 6.0, 3.0).unwrap();
        let a = ens(&[-1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(tv_discretized(&g, &a, &a).unwrap(), 0.0);
        let left = ens(&[-1.0, -2.0], &[0.5, 0.5]);
        let right = ens(&[1.0, 2.0], &[0.5, 0.5]);
        assert_eq!(tv_discretized(&g, &left, &right).unwrap(), 1.0);
        let a = ens(&[-1.0, 1.0], &[0.7, 0.3]);
        let b = ens(&[-1.0, 1.0], &[0.5, 0.5]);
        assert!((tv_discretized(&g, &a, &b).unwrap() - 0.2).abs() < 1e-12);
        let unnorm = ParticleEnsemble::weighted(vec![sv(&[0.0])], vec![0.0]).unwrap();
        assert_eq!(
            tv_discretized(&g, &unnorm, &a).unwrap_err(),
            Error::NotNormalized
        );
    }

    #[test]
    fn tv_of_resampled_ensemble_shrinks_with_size() {
        let g = HypercubeGrid::new(sv(&[0.0, 0.0]), 6.0, 1.0).unwrap();
        let mut rng = RandomStream::from_seed(5);
        let mut last = f64::INFINITY;
        for n in [100, 1_000, 10_000] {
            let mut tv = 0.0;
            for _ in 0..10 {
                let xs: Vec<StateVector> = (0..n)
                    .map(|_| sv(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]))
                    .collect();
                let lw: Vec<f64> = xs.iter().map(|x| -0.1 * x.norm_squared()).collect();
                let e = normalize_weights(ParticleEnsemble::weighted(xs, lw).unwrap()).unwrap();
                let r = multinomial_resample(&e, &mut rng).unwrap();
                tv += tv_discretized(&g, &e, &r).unwrap() / 10.0;
            }
            assert!(tv < last, "n = {n}: {tv} !< {last}");
            last = tv;
        }
    }

    #[test]
    fn nmse_examples() {
        let truth = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        assert_eq!(nmse_curve(&truth, &truth).unwrap(), vec![0.0, 0.0]);
        let est = vec![sv(&[0.0, 0.0]), sv(&[0.0, 1.0])];
        assert_eq!(nmse_curve(&truth, &est).unwrap(), vec![1.0, 0.0]);
        let c = -3.5;
        let scale = |v: &[StateVector]| -> Vec<StateVector> {
            v.iter()
                .map(|x| sv(&x.iter().map(|a| a * c).collect::<Vec<_>>()))
                .collect()
        };
        let scaled = nmse_curve(&scale(&truth), &scale(&est)).unwrap();
        assert!((scaled[0] - 1.0).abs() < 1e-12 && scaled[1] == 0.0);
        assert_eq!(
            nmse_curve(&[StateVector::zeros(2)], &[sv(&[1.0, 1.0])]).unwrap_err(),
            Error::UndefinedNormalization
        );
        assert!(nmse_curve(&truth, &est[..1]).is_err());
    }

    fn model_curve(gamma: f64, d0: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| (1.0 - gamma * gamma).powi(n as i32) / (gamma * gamma) * d0)
            .collect()
    }

    #[test]
    fn fit_recovers_gamma_on_noiseless_curves() {
        for gamma in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let fit = fit_gamma_values(&model_curve(gamma, 1.0, 30), 1.0, None).unwrap();
            assert!(
                (fit.gamma_hat - gamma).abs() < 1e-6,
                "{gamma}: {}",
                fit.gamma_hat
            );
            assert!(fit.gamma_hat > 0.0 && fit.gamma_hat < 1.0);
        }
        let fit = fit_gamma_values(
            &model_curve(0.5, 1.0, 30),
            1.0,
            Some(DEFAULT_FLOOR_MULTIPLIER),
        )
        .unwrap();
        assert!((fit.gamma_hat - 0.5).abs() < 1e-6);
        assert!(fit.n_cut >= 2 && fit.n_cut < 29);
    }

    #[test]
    fn fit_stops_at_the_floor() {
        let v: Vec<f64> = model_curve(0.6, 0.3, 40)
            .into_iter()
            .map(|x| x.clamp(0.01, 1.0))
            .collect();
        let fit = fit_gamma_values(&v, 0.3, Some(1.5)).unwrap();
        assert!(fit.n_cut >= 2 && fit.n_cut < 12, "n_cut {}", fit.n_cut);
        assert!((fit.gamma_hat - 0.6).abs() < 1e-6, "{}", fit.gamma_hat);
    }

    #[test]
    fn constant_curve_has_insufficient_decay() {
        let v = vec![0.4; 30];
        assert!(matches!(
            fit_gamma_values(&v, 0.4, Some(1.5)),
            Err(Error::InsufficientDecay { .. })
        ));
        assert!(fit_gamma_values(&[0.5, 0.4], 1.0, None).is_err());
    }

    #[test]
    fn tv_curve_from_runs() {
        let c = TvCurve::from_runs(&[vec![1.0, 0.5, 0.2], vec![0.8, 0.3, 0.2]]).unwrap();
        assert!((c.values[0] - 0.9).abs() < 1e-15);
        assert!((c.stderr[0] - 0.1).abs() < 1e-12);
        assert_eq!(c.stderr[2], 0.0);
        assert!(TvCurve::new(vec![1.5], vec![0.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn tv_is_a_bounded_symmetric_metric(
            xa in prop::collection::vec(-7.0f64..7.0, 1..30),
            xb in prop::collection::vec(-7.0f64..7.0, 1..30),
            xc in prop::collection::vec(-7.0f64..7.0, 1..30),
            seed in 0u64..1000,
        ) {
            let g = HypercubeGrid::new(sv(&[0.0]), 6.0, 1.5).unwrap();
            let mut rng = RandomStream::from_seed(seed);
            let mk = |xs: &[f64], rng: &mut RandomStream| {
                let w: Vec<f64> = xs.iter().map(|_| rng.random_range(0.01..1.0)).collect();
                ens(xs, &w)
            };
            let (a, b, c) = (mk(&xa, &mut rng), mk(&xb, &mut rng), mk(&xc, &mut rng));
            let ab = tv_discretized(&g, &a, &b).unwrap();
            let ba = tv_discretized(&g, &b, &a).unwrap();
            let ac = tv_discretized(&g, &a, &c).unwrap();
            let cb = tv_discretized(&g, &c, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
