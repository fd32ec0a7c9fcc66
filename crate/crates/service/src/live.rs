//! Wall-clock paced closed loop driven by the remote operator.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{info, warn};
use rcbf_core::delay::DelayModel;
use rcbf_core::harness::{derive_seed, ClosedLoop, Operator, RunConfig};
use rcbf_core::task::{generate_task, TaskGenConfig, TaskSpec};
use rcbf_core::{clamp_norm, Vec3};
use tokio::sync::broadcast;

use crate::protocol::{CommandFrame, MetricsFrame, ServerMessage, StateFrame, TaskFrame};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub run: RunConfig,
    /// Seconds without a command before the desired velocity drops to zero.
    pub deadman: f64,
    pub state_hz: f64,
    pub metrics_hz: f64,
    /// Used to draw the next task once all targets are reached.
    pub task_gen: TaskGenConfig,
    pub seed: u64,
    /// Number of recent solves the metrics percentiles cover.
    pub solve_window: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            run: RunConfig {
                time_limit: f64::INFINITY,
                ..RunConfig::default()
            },
            deadman: 0.5,
            state_hz: 30.0,
            metrics_hz: 2.0,
            task_gen: TaskGenConfig::default(),
            seed: 0,
            solve_window: 200,
        }
    }
}

/// Latest-value slot written by the connection, drained by the loop.
#[derive(Debug, Default)]
pub(crate) struct Inbox {
    command: Option<Vec3>,
    last_seq: Option<u64>,
    delay: Option<DelayModel>,
    margin: Option<bool>,
}

impl Inbox {
    /// Stores a command unless it is stale. Errors describe rejected input.
    pub(crate) fn accept_command(&mut self, frame: &CommandFrame, v_max: f64) -> Result<bool, String> {
        if !frame.u.iter().all(|c| c.is_finite()) {
            return Err(format!("command {} has non-finite components", frame.seq));
        }
        if self.last_seq.is_some_and(|s| frame.seq <= s) {
            return Ok(false);
        }
        self.last_seq = Some(frame.seq);
        self.command = Some(clamp_norm(&Vec3::from(frame.u), v_max));
        Ok(true)
    }

    pub(crate) fn configure(&mut self, delay: Option<DelayModel>, margin: Option<bool>) {
        if delay.is_some() {
            self.delay = delay;
        }
        if margin.is_some() {
            self.margin = margin;
        }
    }

    /// Forgets the previous operator's sequence numbers.
    pub(crate) fn new_session(&mut self) {
        self.last_seq = None;
        self.command = None;
    }
}

pub(crate) struct Shared {
    pub(crate) inbox: Mutex<Inbox>,
    pub(crate) task: Mutex<TaskFrame>,
    pub(crate) operator: AtomicBool,
    pub(crate) stop: AtomicBool,
    clock_bits: AtomicU64,
}

impl Shared {
    pub(crate) fn new(task: TaskFrame) -> Self {
        Self {
            inbox: Mutex::new(Inbox::default()),
            task: Mutex::new(task),
            operator: AtomicBool::new(false),
            stop: AtomicBool::new(false),
            clock_bits: AtomicU64::new(0f64.to_bits()),
        }
    }

    /// Server logical clock (s).
    pub(crate) fn clock(&self) -> f64 {
        f64::from_bits(self.clock_bits.load(Ordering::Relaxed))
    }

    fn set_clock(&self, t: f64) {
        self.clock_bits.store(t.to_bits(), Ordering::Relaxed);
    }
}

#[derive(Default)]
struct Counters {
    tasks_completed: u64,
    targets_reached: u64,
    collisions: u64,
    dmin_violations: u64,
    in_collision: bool,
    in_violation: bool,
    min_surf: f64,
    solves: VecDeque<f64>,
}

impl Counters {
    fn observe_surface(&mut self, surf: f64, d_min: f64) {
        self.min_surf = self.min_surf.min(surf);
        let collided = surf < 0.0;
        let violated = surf < d_min;
        self.collisions += u64::from(collided && !self.in_collision);
        self.dmin_violations += u64::from(violated && !self.in_violation);
        self.in_collision = collided;
        self.in_violation = violated;
    }

    fn percentiles(&self) -> (f64, f64, f64) {
        if self.solves.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let mut v: Vec<f64> = self.solves.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        (at(0.5), at(0.95), v[v.len() - 1])
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn new_loop(task: &TaskSpec, config: &ServiceConfig, margin: bool, delay: &DelayModel, index: u64) -> ClosedLoop {
    let run = RunConfig {
        margin,
        delay: delay.clone(),
        seed: derive_seed(config.seed, &[0x11fe, index]),
        ..config.run.clone()
    };
    ClosedLoop::with_operator(task, run, Operator::external(config.deadman))
}

pub(crate) fn spawn(
    task: TaskSpec,
    config: ServiceConfig,
    shared: Arc<Shared>,
    tx: broadcast::Sender<ServerMessage>,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("rcbf-live".into())
        .spawn(move || run(task, config, shared, tx))
        .expect("spawn simulation thread")
}

fn run(mut task: TaskSpec, config: ServiceConfig, shared: Arc<Shared>, tx: broadcast::Sender<ServerMessage>) {
    let safety = config.run.controller.safety;
    let mut index = 0u64;
    let mut margin = config.run.margin;
    let mut delay = config.run.delay.clone();
    let mut sim = new_loop(&task, &config, margin, &delay, index);
    let mut counters = Counters {
        min_surf: f64::INFINITY,
        ..Counters::default()
    };
    let mut offset = 0.0;
    let mut u_des = Vec3::zeros();
    let mut next_state = 0.0;
    let mut next_metrics = 0.0;
    let started = Instant::now();

    while !shared.stop.load(Ordering::Relaxed) {
        let local = sim.time();
        {
            let mut inbox = shared.inbox.lock().expect("inbox lock");
            if let Some(u) = inbox.command.take() {
                sim.set_operator_command(u, local);
            }
            if let Some(d) = inbox.delay.take() {
                info!("delay model -> {d}");
                sim.set_delay(d.clone());
                delay = d;
            }
            if let Some(m) = inbox.margin.take() {
                info!("margin -> {m}");
                sim.set_margin(m);
                margin = m;
            }
        }

        let before = sim.script().index();
        if let Some(row) = sim.step() {
            u_des = row.u_des;
            if let Some(sol) = sim.controller().last_solution() {
                counters.solves.push_back(sol.solve_time.as_secs_f64() * 1e3);
                if counters.solves.len() > config.solve_window {
                    counters.solves.pop_front();
                }
            }
        }
        counters.targets_reached += (sim.script().index() - before) as u64;
        counters.observe_surface(sim.surface_distance(), safety.d_min);

        let t = offset + sim.time();
        shared.set_clock(t);

        if !task.targets_m.is_empty() && sim.script().done() {
            counters.tasks_completed += 1;
            index += 1;
            match generate_task(derive_seed(config.seed, &[0x7a5c, index]), &config.task_gen, &safety) {
                Ok(next) => {
                    offset = t;
                    task = next;
                    sim = new_loop(&task, &config, margin, &delay, index);
                    let frame = TaskFrame::new(&task, index, safety.r_rob, safety.d_min);
                    *shared.task.lock().expect("task lock") = frame.clone();
                    let mut msg = ServerMessage::Task(frame);
                    msg.stamp(0, t);
                    let _ = tx.send(msg);
                }
                Err(e) => warn!("could not generate next task: {e}"),
            }
        }

        if t + 1e-9 >= next_state {
            next_state += 1.0 / config.state_hz;
            let robot = sim.plant().state().robot;
            let applied = sim.plant().command().map_or(Vec3::zeros(), |c| c.u);
            let frame = StateFrame {
                seq: 0,
                t,
                pos: robot.position.into(),
                vel: robot.velocity.into(),
                u_applied: applied.into(),
                u_des: u_des.into(),
                sigma_k: sim.controller().sigma(),
                rtt_mean_ms: sim.controller().rtt_stats().mean * 1e3,
                min_surf_dist: finite(sim.surface_distance()),
                targets_remaining: sim.script().remaining(),
            };
            let _ = tx.send(ServerMessage::State(frame));
        }
        if t + 1e-9 >= next_metrics {
            next_metrics += 1.0 / config.metrics_hz;
            let (p50, p95, max) = counters.percentiles();
            let frame = MetricsFrame {
                seq: 0,
                t,
                tasks_completed: counters.tasks_completed,
                targets_reached: counters.targets_reached,
                collisions: counters.collisions,
                dmin_violations: counters.dmin_violations,
                min_surf_dist: finite(counters.min_surf),
                solve_ms_p50: p50,
                solve_ms_p95: p95,
                solve_ms_max: max,
                delay: delay.to_string(),
                margin,
                operator_connected: shared.operator.load(Ordering::Relaxed),
            };
            let _ = tx.send(ServerMessage::Metrics(frame));
        }

        let due = started + Duration::from_secs_f64(t);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
}
