//! Shared geometric and kinematic vocabulary.
//!
//! Everything is SI: meters, meters per second, seconds. Times are logical
//! monotonic seconds; nothing here reads a wall clock.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Cartesian position (m) or velocity (m/s).
pub type Vec3 = nalgebra::Vector3<f64>;

/// Timestamped position and velocity of the controlled point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Monotonic time of the measurement (s).
    pub stamp: f64,
}

impl RobotState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            stamp: 0.0,
        }
    }
}

/// A velocity command as transmitted to the remote system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub u: Vec3,
    pub stamp: f64,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(rename = "center_m")]
    pub center: [f64; 3],
    #[serde(rename = "radius_m")]
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!("obstacle radius must be > 0, got {radius}")));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(invalid("obstacle center must be finite"));
        }
        Ok(Self {
            center: [center.x, center.y, center.z],
            radius,
        })
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    /// Distance from `p` to the obstacle surface, shrunk by the robot radius.
    /// Negative means the robot sphere intersects the obstacle.
    pub fn surface_distance(&self, p: &Vec3, r_rob: f64) -> f64 {
        (p - self.center()).norm() - self.radius - r_rob
    }
}

/// Safety geometry and margin gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyParams {
    /// Radius of the sphere circumscribing the robot (m).
    pub r_rob: f64,
    /// Minimum clearance to keep to obstacle surfaces (m).
    pub d_min: f64,
    /// DCBF decay rate, in (0, 1].
    pub gamma: f64,
    pub k_sigma: f64,
    /// Upper bound on the robot speed used for the delay margin (m/s).
    pub v_max_norm: f64,
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.r_rob >= 0.0 && self.d_min >= 0.0 && self.k_sigma >= 0.0) {
            return Err(invalid("r_rob, d_min and k_sigma must be non-negative"));
        }
        if !(self.v_max_norm > 0.0) {
            return Err(invalid("v_max_norm must be positive"));
        }
        Ok(())
    }
}

impl Default for SafetyParams {
    /// Simulation values: a 0.25 x 0.25 x 0.1 m box, 1 cm clearance,
    /// gamma 0.5, unit margin gain and 0.87 m/s top speed.
    fn default() -> Self {
        Self {
            r_rob: circumscribed_radius(0.25, 0.25, 0.1).expect("positive box"),
            d_min: 0.01,
            gamma: 0.5,
            k_sigma: 1.0,
            v_max_norm: 0.87,
        }
    }
}

/// Per-component input bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputLimits {
    pub u_b: f64,
}

impl InputLimits {
    pub fn new(u_b: f64) -> Result<Self> {
        if !(u_b > 0.0) || !u_b.is_finite() {
            return Err(invalid(format!("u_b must be > 0, got {u_b}")));
        }
        Ok(Self { u_b })
    }
}

impl Default for InputLimits {
    fn default() -> Self {
        Self { u_b: 0.5 }
    }
}

/// Radius of the sphere circumscribing a `width x length x height` box.
pub fn circumscribed_radius(width: f64, length: f64, height: f64) -> Result<f64> {
    if !(width > 0.0 && length > 0.0 && height > 0.0) {
        return Err(invalid(format!(
            "box dimensions must be positive, got ({width}, {length}, {height})"
        )));
    }
    Ok((width * width + length * length + height * height).sqrt() / 2.0)
}

/// Saturates each component of `u` to `[-u_b, u_b]`.
pub fn clamp_input(u: &Vec3, limits: &InputLimits) -> Vec3 {
    u.map(|c| c.clamp(-limits.u_b, limits.u_b))
}

/// Scales `v` down so its norm does not exceed `max_norm`.
pub fn clamp_norm(v: &Vec3, max_norm: f64) -> Vec3 {
    let n = v.norm();
    if n > max_norm && n > 0.0 {
        v * (max_norm / n)
    } else {
        *v
    }
}
