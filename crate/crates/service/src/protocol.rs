//! JSON wire format. One object per WebSocket text frame, tagged by `type`.
//!
//! Server frames carry a per-connection `seq` that strictly increases and the
//! server's logical clock `t` in seconds.

use rcbf_core::delay::DelayModel;
use rcbf_core::task::{TaskSpec, Workspace};
use rcbf_core::Obstacle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Task(TaskFrame),
    Metrics(MetricsFrame),
    Error(NoticeFrame),
    Busy(NoticeFrame),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(CommandFrame),
    Config(ConfigFrame),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub seq: u64,
    pub t: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    /// Input currently applied by the plant after clamping and the safety filter.
    pub u_applied: [f64; 3],
    /// Operator input the controller is tracking (zero once the deadman fires).
    pub u_des: [f64; 3],
    pub sigma_k: f64,
    pub rtt_mean_ms: f64,
    /// `None` when the task has no obstacles.
    pub min_surf_dist: Option<f64>,
    pub targets_remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFrame {
    pub seq: u64,
    pub t: f64,
    /// Counts tasks served since startup; changes when a new task is loaded.
    pub task_index: u64,
    pub workspace: Workspace,
    pub start_m: [f64; 3],
    pub targets_m: Vec<[f64; 3]>,
    pub obstacles: Vec<Obstacle>,
    pub r_rob: f64,
    pub d_min: f64,
}

impl TaskFrame {
    pub fn new(task: &TaskSpec, task_index: u64, r_rob: f64, d_min: f64) -> Self {
        Self {
            seq: 0,
            t: 0.0,
            task_index,
            workspace: task.workspace,
            start_m: task.start_m,
            targets_m: task.targets_m.clone(),
            obstacles: task.obstacles.clone(),
            r_rob,
            d_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub seq: u64,
    pub t: f64,
    pub tasks_completed: u64,
    pub targets_reached: u64,
    /// Episodes of surface distance below zero.
    pub collisions: u64,
    /// Episodes of surface distance below `d_min`.
    pub dmin_violations: u64,
    pub min_surf_dist: Option<f64>,
    /// Percentiles over the most recent solves (ms).
    pub solve_ms_p50: f64,
    pub solve_ms_p95: f64,
    pub solve_ms_max: f64,
    pub delay: String,
    pub margin: bool,
    pub operator_connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoticeFrame {
    pub seq: u64,
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandFrame {
    pub seq: u64,
    pub u: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFrame {
    #[serde(default)]
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<bool>,
}

/// Delay model as sent by clients, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    None,
    Gaussian { mean_ms: f64, std_ms: f64 },
    Constant { d_ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
    /// The bundled trace; clients cannot name files on the server.
    Trace,
}

impl DelaySpec {
    pub fn to_model(&self) -> rcbf_core::Result<DelayModel> {
        let model = match *self {
            DelaySpec::None => DelayModel::None,
            DelaySpec::Gaussian { mean_ms, std_ms } => DelayModel::Gaussian {
                mean: mean_ms * 1e-3,
                std: std_ms * 1e-3,
            },
            DelaySpec::Constant { d_ms } => DelayModel::Constant(d_ms * 1e-3),
            DelaySpec::Uniform { lo_ms, hi_ms } => DelayModel::Uniform {
                lo: lo_ms * 1e-3,
                hi: hi_ms * 1e-3,
            },
            DelaySpec::Trace => DelayModel::bundled_trace(),
        };
        model.validate()?;
        Ok(model)
    }
}

impl ServerMessage {
    pub fn seq(&self) -> u64 {
        match self {
            ServerMessage::State(f) => f.seq,
            ServerMessage::Task(f) => f.seq,
            ServerMessage::Metrics(f) => f.seq,
            ServerMessage::Error(f) | ServerMessage::Busy(f) => f.seq,
        }
    }

    pub fn t(&self) -> f64 {
        match self {
            ServerMessage::State(f) => f.t,
            ServerMessage::Task(f) => f.t,
            ServerMessage::Metrics(f) => f.t,
            ServerMessage::Error(f) | ServerMessage::Busy(f) => f.t,
        }
    }

    pub(crate) fn stamp(&mut self, seq: u64, t: f64) {
        let (s, time) = match self {
            ServerMessage::State(f) => (&mut f.seq, &mut f.t),
            ServerMessage::Task(f) => (&mut f.seq, &mut f.t),
            ServerMessage::Metrics(f) => (&mut f.seq, &mut f.t),
            ServerMessage::Error(f) | ServerMessage::Busy(f) => (&mut f.seq, &mut f.t),
        };
        *s = seq;
        *time = t;
    }

    /// Stamps only `seq`, keeping the time the frame was produced at.
    pub(crate) fn set_seq(&mut self, seq: u64) {
        let t = self.t();
        self.stamp(seq, t);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client frames serialize")
    }
}
