//! Spherical obstacle barrier and the discrete-time CBF condition.
//!
//! The barrier is the distance to an inflated sphere,
//! `h(p) = |p - c| - (r_obs + r_rob + d_min + sigma)`, so the delay margin
//! `sigma` acts as an exact radius inflation. A transition `x -> x'` satisfies
//! the discrete condition when `h(x') >= (1 - gamma) h(x)`.

use crate::error::{invalid, Error, Result};
use crate::geometry::{Obstacle, SafetyParams, Vec3};

/// Minimum distance to the obstacle center at which `h` is differentiable.
pub const SINGULARITY_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub obstacle: Obstacle,
    pub r_rob: f64,
    pub d_min: f64,
    /// Delay margin (m).
    pub sigma: f64,
    pub gamma: f64,
}

impl BarrierParams {
    pub fn new(obstacle: Obstacle, safety: &SafetyParams, sigma: f64) -> Result<Self> {
        let p = Self {
            obstacle,
            r_rob: safety.r_rob,
            d_min: safety.d_min,
            sigma,
            gamma: safety.gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.inflated_radius() > 0.0) {
            return Err(invalid("inflated radius must be positive"));
        }
        Ok(())
    }

    pub fn inflated_radius(&self) -> f64 {
        self.base_radius() + self.sigma
    }

    /// Inflated radius without the margin. Subtracting `sigma` last keeps
    /// `h(p; sigma) == h(p; 0) - sigma` exact in floating point.
    fn base_radius(&self) -> f64 {
        self.obstacle.radius + self.r_rob + self.d_min
    }

    fn offset(&self, position: &Vec3) -> Result<(Vec3, f64)> {
        let d = position - self.obstacle.center();
        let n = d.norm();
        if !(n > SINGULARITY_GUARD) {
            return Err(Error::Singularity { distance: n });
        }
        Ok((d, n))
    }
}

pub fn h(position: &Vec3, params: &BarrierParams) -> Result<f64> {
    let (_, n) = params.offset(position)?;
    Ok((n - params.base_radius()) - params.sigma)
}

/// Unit vector pointing away from the obstacle center.
pub fn grad_h(position: &Vec3, params: &BarrierParams) -> Result<Vec3> {
    let (d, n) = params.offset(position)?;
    Ok(d / n)
}

/// `h(x_next) - (1 - gamma) h(x_curr)`; non-negative iff the step is admissible.
pub fn dcbf_residual(x_next: &Vec3, x_curr: &Vec3, params: &BarrierParams) -> Result<f64> {
    Ok(h(x_next, params)? - (1.0 - params.gamma) * h(x_curr, params)?)
}

/// Value and gradient in one pass, for the solver's inner loop.
pub(crate) fn h_and_grad(position: &Vec3, params: &BarrierParams) -> (f64, Vec3) {
    let d = position - params.obstacle.center();
    let n = d.norm().max(SINGULARITY_GUARD);
    ((n - params.base_radius()) - params.sigma, d / n)
}
