//! Real-time WebSocket bridge between a remote operator and the safety-filtered
//! teleoperation loop.
//!
//! The operator's desired velocity replaces the scripted tester; everything
//! downstream (delay channels, controller, plant) is the same stack the batch
//! harness runs. One operator may be connected at a time.

mod live;
pub mod protocol;
mod server;

pub use live::ServiceConfig;
pub use server::{serve, Server, ServiceError};
