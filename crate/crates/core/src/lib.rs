//! Delay-robust obstacle avoidance for velocity-controlled teleoperation.
//!
//! A model predictive controller tracks an operator's desired velocity while
//! discrete-time control barrier functions keep the robot away from spherical
//! obstacles. The barrier radius is inflated by a margin that grows with the
//! measured round-trip time, so the controller stays safe when the state it
//! sees is stale.
//!
//! The crate also carries the apparatus to exercise the controller in closed
//! loop: a delaying message channel, a simulated plant, a scripted operator
//! and a seeded experiment harness.

pub mod barrier;
pub mod delay;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod rtt;
pub mod task;
pub mod tester;

pub use error::{Error, Result};
pub use geometry::{
    circumscribed_radius, clamp_input, clamp_norm, InputLimits, Obstacle, RobotState, SafetyParams, Vec3,
    VelocityCommand,
};
pub use mpc::{MpcConfig, MpcProblem, MpcSolution, WarmStart};
pub use rtt::{safety_margin, RttSample, RttStats, RttWindow};
