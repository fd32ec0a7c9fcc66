//! Receding-horizon velocity controller with per-step DCBF obstacle constraints.

mod cost;
mod sqp;

use std::time::Duration;

use nalgebra::Matrix3;

use crate::geometry::{clamp_input, InputLimits, Obstacle, RobotState, SafetyParams, Vec3, VelocityCommand};
use crate::qp::QpSettings;

pub use cost::{assemble as assemble_cost, evaluate as evaluate_cost, TrackingCost};
pub use sqp::{linearize_constraints, solve, ConstraintLinearization};

/// How the per-(obstacle, step) slack is charged in the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlackPenalty {
    /// `weight * w^2`
    Quadratic,
    /// `weight * w`: exact penalty, constraints hold whenever feasible and
    /// their multipliers stay below the weight.
    Linear,
    /// `weight * (w + w^2)`. The default: the linear part keeps the slack at
    /// zero whenever the constraints are feasible, which the pure quadratic
    /// charge does not (it trades centimetres of barrier violation for a
    /// small tracking gain on every approach).
    Elastic,
}

impl SlackPenalty {
    /// `(rho, q)` such that the penalty is `1/2 rho w^2 + q w`.
    pub(crate) fn coefficients(self, weight: f64) -> (f64, f64) {
        match self {
            SlackPenalty::Quadratic => (2.0 * weight, 0.0),
            SlackPenalty::Linear => (0.0, weight),
            SlackPenalty::Elastic => (2.0 * weight, weight),
        }
    }

    pub fn charge(self, weight: f64, w: f64) -> f64 {
        let (rho, q) = self.coefficients(weight);
        0.5 * rho * w * w + q * w
    }
}

/// What the first input's rate penalty `S` is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateAnchor {
    /// `u_{-1} = u_prev`: the applied command is smoothed across ticks.
    PreviousInput,
    /// Only consecutive planned inputs are charged. The default: anchoring
    /// to `u_prev` with `S = 10 R` makes the applied command a first-order
    /// lag of roughly 0.6 per tick, too slow to follow operator steps.
    Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Prediction step (s).
    pub dt: f64,
    pub q: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub p: Matrix3<f64>,
    pub s: Matrix3<f64>,
    pub slack_weight: f64,
    pub slack_penalty: SlackPenalty,
    pub rate_anchor: RateAnchor,
    pub limits: InputLimits,
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// SQP stops once the accepted step is below this (inf-norm, m/s).
    pub step_tol: f64,
    pub constraint_tol: f64,
    pub initial_trust_radius: f64,
    pub qp: QpSettings,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            step_tol: 1e-6,
            constraint_tol: 1e-6,
            initial_trust_radius: 0.5,
            qp: QpSettings::default(),
        }
    }
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            q: Matrix3::identity() * 10.0,
            r: Matrix3::identity(),
            p: Matrix3::identity() * 10.0,
            s: Matrix3::identity() * 10.0,
            slack_weight: 100.0,
            slack_penalty: SlackPenalty::Elastic,
            rate_anchor: RateAnchor::Horizon,
            limits: InputLimits::default(),
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    /// Delay-compensated current position.
    pub x_hat: Vec3,
    /// Last applied input.
    pub u_prev: Vec3,
    /// Operator's desired velocity.
    pub u_des: Vec3,
    pub obstacles: Vec<Obstacle>,
    pub safety: SafetyParams,
    /// Current delay margin (m).
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u_seq: Vec<Vec3>,
    pub x_pred: Vec<Vec3>,
    /// `omega[j][i]`: slack of obstacle `j` at step `i`.
    pub omega: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Interior-point iterations summed over all SQP subproblems.
    pub qp_iterations: usize,
    pub cost: f64,
    pub solve_time: Duration,
    pub converged: bool,
    /// The start state already lies inside some inflated obstacle.
    pub start_violation: bool,
}

impl MpcSolution {
    pub fn max_slack(&self) -> f64 {
        self.omega.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Previous input sequence shifted by one step with the last entry repeated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub u_seq: Vec<Vec3>,
}

impl WarmStart {
    pub fn cold() -> Self {
        Self::default()
    }

    pub fn from_solution(solution: &MpcSolution) -> Self {
        let mut u_seq: Vec<Vec3> = solution.u_seq.iter().skip(1).copied().collect();
        if let Some(last) = solution.u_seq.last() {
            u_seq.push(*last);
        }
        Self { u_seq }
    }

    pub(crate) fn initial_inputs(&self, problem: &MpcProblem, config: &MpcConfig) -> Vec<Vec3> {
        if self.u_seq.len() == config.horizon {
            self.u_seq
                .iter()
                .map(|u| clamp_input(u, &config.limits))
                .collect()
        } else {
            vec![clamp_input(&problem.u_des, &config.limits); config.horizon]
        }
    }
}

/// Forward-integrates a measured position to `now` using the commands that
/// were active over `[meas.stamp, now]`.
///
/// `log` holds sent commands ordered by stamp; the command in force at time
/// `t` is the newest one stamped at or before `t`, or `fallback` if none is.
pub fn predict_state(meas: &RobotState, now: f64, log: &[VelocityCommand], fallback: Vec3) -> Vec3 {
    let mut position = meas.position;
    if now <= meas.stamp {
        return position;
    }
    let mut t = meas.stamp;
    let mut current = log
        .iter()
        .take_while(|c| c.stamp <= t)
        .last()
        .map(|c| c.u)
        .unwrap_or(fallback);
    let start = meas.stamp;
    for cmd in log.iter().filter(|c| c.stamp > start && c.stamp < now) {
        position += (cmd.stamp - t) * current;
        t = cmd.stamp;
        current = cmd.u;
    }
    position + (now - t) * current
}

/// Positions obtained by integrating `u_des` from `x_hat`; `N + 1` entries.
pub fn build_reference(x_hat: Vec3, u_des: Vec3, horizon: usize, dt: f64) -> Vec<Vec3> {
    let mut refs = Vec::with_capacity(horizon + 1);
    refs.push(x_hat);
    for i in 0..horizon {
        refs.push(refs[i] + dt * u_des);
    }
    refs
}

/// Euler rollout of an input sequence.
pub fn rollout(x0: Vec3, inputs: &[Vec3], dt: f64) -> Vec<Vec3> {
    let mut xs = Vec::with_capacity(inputs.len() + 1);
    xs.push(x0);
    for (i, u) in inputs.iter().enumerate() {
        xs.push(xs[i] + dt * u);
    }
    xs
}

/// The receding-horizon command: first planned input, clamped and stamped.
pub fn first_input(solution: &MpcSolution, limits: &InputLimits, stamp: f64, seq: u64) -> VelocityCommand {
    if !solution.converged {
        log::warn!(
            "emitting command from unconverged solve (seq {seq}, {} iterations, max slack {:.3e})",
            solution.iterations,
            solution.max_slack()
        );
    }
    let u = solution.u_seq.first().copied().unwrap_or_else(Vec3::zeros);
    VelocityCommand {
        u: clamp_input(&u, limits),
        stamp,
        seq,
    }
}
