//! Scripted operator: steers straight at the next target, blind to obstacles.

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TesterConfig {
    pub d_low: f64,
    pub d_high: f64,
    pub v_low: f64,
    pub v_high: f64,
    pub arrive_radius: f64,
}

impl Default for TesterConfig {
    fn default() -> Self {
        Self {
            d_low: 0.15,
            d_high: 0.50,
            v_low: 0.05,
            v_high: 0.50,
            arrive_radius: 0.10,
        }
    }
}

impl TesterConfig {
    /// Speed commanded at distance `d` from the target: flat at `v_low`
    /// below `d_low`, flat at `v_high` above `d_high`, linear in between.
    pub fn speed_at(&self, d: f64) -> f64 {
        if d <= self.d_low {
            self.v_low
        } else if d >= self.d_high {
            self.v_high
        } else {
            self.v_low + (self.v_high - self.v_low) * (d - self.d_low) / (self.d_high - self.d_low)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskScript {
    targets: Vec<Vec3>,
    index: usize,
}

impl TaskScript {
    pub fn new(targets: Vec<Vec3>) -> Self {
        Self { targets, index: 0 }
    }

    pub fn current(&self) -> Option<Vec3> {
        self.targets.get(self.index).copied()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn remaining(&self) -> usize {
        self.targets.len() - self.index
    }

    pub fn done(&self) -> bool {
        self.index >= self.targets.len()
    }

    /// Moves to the next target once `position` is within `arrive_radius`.
    pub fn advance(&mut self, position: &Vec3, arrive_radius: f64) -> bool {
        match self.current() {
            Some(t) if (t - position).norm() <= arrive_radius => {
                self.index += 1;
                true
            }
            _ => false,
        }
    }
}

pub fn desired_velocity(position: &Vec3, script: &TaskScript, config: &TesterConfig) -> Vec3 {
    let Some(target) = script.current() else {
        return Vec3::zeros();
    };
    let offset = target - position;
    let d = offset.norm();
    if d == 0.0 {
        return Vec3::zeros();
    }
    offset / d * config.speed_at(d)
}
