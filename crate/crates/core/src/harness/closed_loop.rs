//! Logical-time closed loop: operator -> controller -> downlink -> plant ->
//! uplink -> controller, advanced one plant tick at a time.

use crate::delay::{DelayChannel, DelayModel};
use crate::geometry::{Obstacle, Vec3, VelocityCommand};
use crate::plant::{Plant, PlantModel};
use crate::task::TaskSpec;
use crate::tester::{desired_velocity, TaskScript, TesterConfig};

use super::controller::{Controller, ControllerConfig, StateReport};
use super::derive_seed;

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// One-way delay applied independently in each direction.
    pub delay: DelayModel,
    pub margin: bool,
    pub seed: u64,
    /// Simulated seconds before a task counts as failed.
    pub time_limit: f64,
    pub plant_dt: f64,
    /// Plant ticks per control period (10 -> 10 Hz at 100 Hz plant).
    pub control_every: u64,
    /// Plant ticks per state report (2 -> 50 Hz).
    pub state_every: u64,
    pub plant: PlantModel,
    pub controller: ControllerConfig,
    pub tester: TesterConfig,
    pub fifo: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delay: DelayModel::None,
            margin: true,
            seed: 0,
            time_limit: 120.0,
            plant_dt: 0.01,
            control_every: 10,
            state_every: 2,
            plant: PlantModel::Ideal,
            controller: ControllerConfig::default(),
            tester: TesterConfig::default(),
            fifo: false,
        }
    }
}

/// One row of the per-tick log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    /// True plant position.
    pub position: Vec3,
    pub velocity: Vec3,
    pub command: Vec3,
    pub u_des: Vec3,
    pub sigma: f64,
    /// `min_j |p - c_j| - r_j - r_rob`; infinite with no obstacles.
    pub min_surf_dist: f64,
    pub solve_ms: f64,
    pub rtt_est_ms: f64,
    pub targets_remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketCounts {
    pub commands_sent: u64,
    pub commands_delivered: u64,
    pub states_sent: u64,
    pub states_delivered: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub success: bool,
    pub collision: bool,
    pub dmin_violation: bool,
    pub targets_reached: usize,
    pub targets_total: usize,
    /// Smallest surface distance seen at any plant tick.
    pub min_surface_distance: f64,
    pub finish_time: f64,
    pub unconverged_solves: usize,
    pub packets: PacketCounts,
    pub log: Vec<TickRecord>,
}

/// Where the desired velocity comes from.
#[derive(Debug, Clone)]
pub enum Operator {
    Tester(TesterConfig),
    /// Latest command from a remote human; zeroed once older than `deadman` s.
    External {
        latest: Option<(Vec3, f64)>,
        deadman: f64,
    },
}

impl Operator {
    pub fn external(deadman: f64) -> Self {
        Operator::External {
            latest: None,
            deadman,
        }
    }
}

pub struct ClosedLoop {
    run: RunConfig,
    obstacles: Vec<Obstacle>,
    r_rob: f64,
    d_min: f64,
    plant: Plant,
    down: DelayChannel<VelocityCommand>,
    up: DelayChannel<StateReport>,
    controller: Controller,
    operator: Operator,
    script: TaskScript,
    tick: u64,
    last_send: f64,
    min_surface: f64,
    collision: bool,
    dmin_violation: bool,
    unconverged: usize,
    log: Vec<TickRecord>,
}

pub(crate) fn min_surface_distance(p: &Vec3, obstacles: &[Obstacle], r_rob: f64) -> f64 {
    obstacles
        .iter()
        .map(|o| o.surface_distance(p, r_rob))
        .fold(f64::INFINITY, f64::min)
}

impl ClosedLoop {
    pub fn new(task: &TaskSpec, run: RunConfig) -> Self {
        Self::with_operator(task, run.clone(), Operator::Tester(run.tester))
    }

    pub fn with_operator(task: &TaskSpec, mut run: RunConfig, operator: Operator) -> Self {
        run.controller.margin_enabled = run.margin;
        let safety = run.controller.safety;
        let controller = Controller::new(run.controller.clone());
        Self {
            obstacles: task.obstacles.clone(),
            r_rob: safety.r_rob,
            d_min: safety.d_min,
            plant: Plant::new(run.plant, task.start()),
            down: DelayChannel::new(run.delay.clone(), derive_seed(run.seed, &[1])).with_fifo(run.fifo),
            up: DelayChannel::new(run.delay.clone(), derive_seed(run.seed, &[2])).with_fifo(run.fifo),
            controller,
            operator,
            script: TaskScript::new(task.targets()),
            tick: 0,
            last_send: 0.0,
            min_surface: f64::INFINITY,
            collision: false,
            dmin_violation: false,
            unconverged: 0,
            log: Vec::new(),
            run,
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.run.plant_dt
    }

    pub fn finished(&self) -> bool {
        self.script.done() || self.time() >= self.run.time_limit
    }

    pub fn script(&self) -> &TaskScript {
        &self.script
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn log(&self) -> &[TickRecord] {
        &self.log
    }

    pub fn min_surface(&self) -> f64 {
        self.min_surface
    }

    /// Surface distance of the true plant position right now.
    pub fn surface_distance(&self) -> f64 {
        min_surface_distance(&self.plant.state().robot.position, &self.obstacles, self.r_rob)
    }

    pub fn run_config(&self) -> &RunConfig {
        &self.run
    }

    /// Stores a remote operator command received at logical time `now`.
    pub fn set_operator_command(&mut self, u: Vec3, now: f64) {
        if let Operator::External { latest, .. } = &mut self.operator {
            *latest = Some((u, now));
        }
    }

    /// Changes the delay model of both directions; in-flight packets keep their times.
    pub fn set_delay(&mut self, model: DelayModel) {
        let salt = self.tick;
        self.down.set_model(model.clone(), derive_seed(self.run.seed, &[1, salt]));
        self.up.set_model(model.clone(), derive_seed(self.run.seed, &[2, salt]));
        self.run.delay = model;
    }

    pub fn set_margin(&mut self, on: bool) {
        self.run.margin = on;
        self.controller.set_margin_enabled(on);
    }

    pub fn delay(&self) -> &DelayModel {
        &self.run.delay
    }

    fn desired(&mut self, now: f64) -> Vec3 {
        let seen = self.controller.latest_state().map(|s| s.position);
        if let Some(p) = seen {
            self.script.advance(&p, self.run.tester.arrive_radius);
        }
        match &self.operator {
            Operator::Tester(cfg) => seen
                .map(|p| desired_velocity(&p, &self.script, cfg))
                .unwrap_or_else(Vec3::zeros),
            Operator::External { latest, deadman } => match latest {
                Some((u, at)) if now - at <= *deadman => *u,
                _ => Vec3::zeros(),
            },
        }
    }

    /// Advances one plant tick. Returns the log row if a control tick ran.
    pub fn step(&mut self) -> Option<TickRecord> {
        let t = self.time();
        for p in self.down.poll(t) {
            self.plant.receive(p.payload);
        }
        if self.tick % self.run.state_every == 0 {
            let mut state = self.plant.state().robot;
            state.stamp = t;
            let report = StateReport {
                state,
                echo_seq: self.plant.command().map(|c| c.seq),
            };
            self.up.send(report, t);
        }
        for p in self.up.poll(t) {
            self.controller.on_state(p.payload, p.deliver_time);
        }

        let position = self.plant.state().robot.position;
        let surf = min_surface_distance(&position, &self.obstacles, self.r_rob);
        self.min_surface = self.min_surface.min(surf);
        self.collision |= surf < 0.0;
        self.dmin_violation |= surf < self.d_min;

        let mut record = None;
        if self.tick % self.run.control_every == 0 {
            let u_des = self.desired(t);
            let out = self.controller.tick(t, u_des, &self.obstacles);
            if out.solution.as_ref().is_some_and(|s| !s.converged) {
                self.unconverged += 1;
            }
            let send_time = out.send_time.max(self.last_send);
            self.last_send = send_time;
            self.down.send(out.command, send_time);
            let row = TickRecord {
                t,
                position,
                velocity: self.plant.state().robot.velocity,
                command: out.command.u,
                u_des,
                sigma: out.sigma,
                min_surf_dist: surf,
                solve_ms: out.solve_time * 1e3,
                rtt_est_ms: out.rtt.mean * 1e3,
                targets_remaining: self.script.remaining(),
            };
            self.log.push(row);
            record = Some(row);
        }

        self.plant.advance(self.run.plant_dt);
        self.tick += 1;
        record
    }

    /// Delivers everything still in flight and summarizes the run.
    pub fn finish(mut self) -> RunResult {
        let commands = self.down.poll(f64::INFINITY).len();
        let states = self.up.poll(f64::INFINITY).len();
        debug_assert!(commands as u64 <= self.down.sent() && states as u64 <= self.up.sent());
        let packets = PacketCounts {
            commands_sent: self.down.sent(),
            commands_delivered: self.down.delivered(),
            states_sent: self.up.sent(),
            states_delivered: self.up.delivered(),
        };
        let done = self.script.done();
        RunResult {
            success: done && !self.collision,
            collision: self.collision,
            dmin_violation: self.dmin_violation,
            targets_reached: self.script.index(),
            targets_total: self.script.index() + self.script.remaining(),
            min_surface_distance: self.min_surface,
            finish_time: self.time(),
            unconverged_solves: self.unconverged,
            packets,
            log: self.log,
        }
    }
}

/// Runs `task` to completion or time limit in logical time.
pub fn run_task(task: &TaskSpec, run: &RunConfig) -> RunResult {
    let mut sim = ClosedLoop::new(task, run.clone());
    while !sim.finished() {
        sim.step();
    }
    sim.finish()
}

/// Same loop paced against the wall clock, one plant tick per `plant_dt`.
pub fn run_task_realtime(task: &TaskSpec, run: &RunConfig) -> RunResult {
    let started = std::time::Instant::now();
    let mut sim = ClosedLoop::new(task, run.clone());
    while !sim.finished() {
        sim.step();
        let due = std::time::Duration::from_secs_f64(sim.time());
        if let Some(wait) = due.checked_sub(started.elapsed()) {
            std::thread::sleep(wait);
        }
    }
    sim.finish()
}
