//! Operator-side controller node: state intake, RTT probing, margin, MPC tick.

use std::collections::VecDeque;

use crate::geometry::{clamp_norm, Obstacle, RobotState, SafetyParams, Vec3, VelocityCommand};
use crate::mpc::{self, MpcConfig, MpcProblem, MpcSolution, WarmStart};
use crate::rtt::{safety_margin_with, MarginTerms, RttSample, RttStats, RttWindow, SolveTimeFilter};

/// State report sent uplink by the plant. `echo_seq` is the newest command
/// the plant had received when the report was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateReport {
    pub state: RobotState,
    pub echo_seq: Option<u64>,
}

/// Controller computation time charged to the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveTimeModel {
    /// `base + per_qp_iteration * (interior-point iterations)`; deterministic.
    Logical { base: f64, per_qp_iteration: f64 },
    /// Wall-clock duration of the solve.
    Measured,
}

impl Default for SolveTimeModel {
    fn default() -> Self {
        SolveTimeModel::Logical {
            base: 1e-3,
            per_qp_iteration: 20e-6,
        }
    }
}

impl SolveTimeModel {
    pub fn charge(&self, solution: &MpcSolution) -> f64 {
        match *self {
            SolveTimeModel::Logical { base, per_qp_iteration } => {
                base + per_qp_iteration * solution.qp_iterations as f64
            }
            SolveTimeModel::Measured => solution.solve_time.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub mpc: MpcConfig,
    pub safety: SafetyParams,
    pub margin_enabled: bool,
    pub margin_terms: MarginTerms,
    pub rtt_window: usize,
    pub solve_time: SolveTimeModel,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mpc: MpcConfig::default(),
            safety: SafetyParams::default(),
            margin_enabled: true,
            margin_terms: MarginTerms::default(),
            rtt_window: crate::rtt::DEFAULT_WINDOW,
            solve_time: SolveTimeModel::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TickOutput {
    pub command: VelocityCommand,
    /// Time at which the command leaves the controller.
    pub send_time: f64,
    pub sigma: f64,
    pub rtt: RttStats,
    /// Charged computation time (s); zero while waiting for the first ping.
    pub solve_time: f64,
    pub solution: Option<MpcSolution>,
}

pub struct Controller {
    config: ControllerConfig,
    rtt: RttWindow,
    solve_filter: SolveTimeFilter,
    latest: Option<RobotState>,
    sent: VecDeque<VelocityCommand>,
    last_echo: Option<u64>,
    warm: WarmStart,
    u_prev: Vec3,
    next_seq: u64,
    last_solution: Option<MpcSolution>,
}

/// Sent commands older than this are dropped from the prediction log (s).
const LOG_HORIZON: f64 = 5.0;

impl Controller {
    pub fn new(config: ControllerConfig) -> Self {
        let window = config.rtt_window;
        Self {
            config,
            rtt: RttWindow::new(window),
            solve_filter: SolveTimeFilter::default(),
            latest: None,
            sent: VecDeque::new(),
            last_echo: None,
            warm: WarmStart::cold(),
            u_prev: Vec3::zeros(),
            next_seq: 1,
            last_solution: None,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn set_margin_enabled(&mut self, on: bool) {
        self.config.margin_enabled = on;
    }

    pub fn latest_state(&self) -> Option<&RobotState> {
        self.latest.as_ref()
    }

    /// Solution of the most recent tick; `None` while still pinging.
    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.last_solution.as_ref()
    }

    pub fn rtt_stats(&self) -> RttStats {
        self.rtt.estimate()
    }

    /// Handles a state report received at `receive_time`.
    pub fn on_state(&mut self, report: StateReport, receive_time: f64) {
        if self.latest.is_none_or(|s| report.state.stamp > s.stamp) {
            self.latest = Some(report.state);
        }
        let Some(echo) = report.echo_seq else { return };
        if self.last_echo.is_some_and(|e| echo <= e) {
            return;
        }
        self.last_echo = Some(echo);
        if let Some(cmd) = self.sent.iter().find(|c| c.seq == echo) {
            let sample = RttSample {
                rtt: (receive_time - cmd.stamp).max(0.0),
                stamp: receive_time,
            };
            self.rtt.push(sample).expect("non-negative rtt");
        }
    }

    /// Current delay margin.
    pub fn sigma(&self) -> f64 {
        if !self.config.margin_enabled {
            return 0.0;
        }
        safety_margin_with(
            &self.rtt.estimate(),
            &self.config.safety,
            self.solve_filter.value(),
            self.config.margin_terms,
        )
    }

    /// One control period: predict, solve, emit.
    ///
    /// Until a state report and a first RTT sample have arrived the controller
    /// emits zero commands, which double as pings.
    pub fn tick(&mut self, now: f64, u_des: Vec3, obstacles: &[Obstacle]) -> TickOutput {
        let rtt = self.rtt.estimate();
        let ready = self.latest.is_some() && rtt.count > 0;
        let (u, solve_time, solution, sigma) = if ready {
            let sigma = self.sigma();
            let meas = self.latest.expect("ready");
            let log: Vec<VelocityCommand> = self.sent.iter().copied().collect();
            let x_hat = mpc::predict_state(&meas, now, &log, self.u_prev);
            let problem = MpcProblem {
                x_hat,
                u_prev: self.u_prev,
                u_des: clamp_norm(&u_des, self.config.safety.v_max_norm),
                obstacles: obstacles.to_vec(),
                safety: self.config.safety,
                sigma,
            };
            let sol = mpc::solve(&problem, &self.config.mpc, &self.warm);
            let charged = self.config.solve_time.charge(&sol);
            self.solve_filter.update(charged);
            self.warm = WarmStart::from_solution(&sol);
            let u = mpc::first_input(&sol, &self.config.mpc.limits, now, self.next_seq).u;
            (u, charged, Some(sol), sigma)
        } else {
            (Vec3::zeros(), 0.0, None, self.sigma())
        };
        let send_time = now + solve_time;
        let command = VelocityCommand {
            u,
            stamp: send_time,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.u_prev = u;
        self.sent.push_back(command);
        while self.sent.front().is_some_and(|c| c.stamp < now - LOG_HORIZON) {
            self.sent.pop_front();
        }
        self.last_solution.clone_from(&solution);
        TickOutput {
            command,
            send_time,
            sigma,
            rtt,
            solve_time,
            solution,
        }
    }
}
