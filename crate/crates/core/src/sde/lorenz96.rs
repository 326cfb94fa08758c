use serde::{Deserialize, Serialize};

use super::ItoSde;
use crate::error::{Error, Result};
use crate::ssm::StateVector;

/// Stochastic Lorenz 96 with additive isotropic noise:
/// `dX_i = [X_{i−1}(X_{i+1} − X_{i−2}) − X_i + F] dt + σ_x dW_i`, indices mod `d_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96Params {
    pub d_x: usize,
    pub forcing: f64,
    pub sigma_x: f64,
}

impl Lorenz96Params {
    pub fn new(d_x: usize, forcing: f64, sigma_x: f64) -> Result<Self> {
        let p = Lorenz96Params {
            d_x,
            forcing,
            sigma_x,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x < 4 {
            return Err(Error::invalid(format!(
                "Lorenz 96 needs d_x >= 4, got {}",
                self.d_x
            )));
        }
        if !(self.sigma_x >= 0.0) || !self.sigma_x.is_finite() || !self.forcing.is_finite() {
            return Err(Error::invalid("Lorenz 96 needs finite F and sigma_x >= 0"));
        }
        Ok(())
    }
}

impl ItoSde for Lorenz96Params {
    fn dim(&self) -> usize {
        self.d_x
    }

    #[inline]
    fn drift_into(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let d = x.len();
        let f = self.forcing;
        // Wrapped edges first, then the branch-free interior.
        for i in [0, 1, d - 1] {
            let im2 = (i + d - 2) % d;
            let im1 = (i + d - 1) % d;
            let ip1 = (i + 1) % d;
            out[i] = x[im1] * (x[ip1] - x[im2]) - x[i] + f;
        }
        for i in 2..d - 1 {
            out[i] = x[i - 1] * (x[i + 1] - x[i - 2]) - x[i] + f;
        }
    }

    fn diffusion_scale(&self, _x: &[f64], _t: f64) -> f64 {
        self.sigma_x
    }
}

pub fn lorenz96_drift(p: &Lorenz96Params, x: &StateVector) -> Result<StateVector> {
    p.validate()?;
    Error::check_dim("lorenz96_drift", p.d_x, x.dim())?;
    let mut out = vec![0.0; p.d_x];
    p.drift_into(x, 0.0, &mut out);
    Ok(StateVector::from_vec(out))
}
