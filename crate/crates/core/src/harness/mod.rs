//! Seeded closed-loop experiments and their outputs.

mod closed_loop;
mod controller;
mod matrix;

pub use closed_loop::{
    run_task, run_task_realtime, ClosedLoop, Operator, PacketCounts, RunConfig, RunResult, TickRecord,
};
pub use controller::{Controller, ControllerConfig, SolveTimeModel, StateReport, TickOutput};
pub use matrix::{
    run_matrix, table_delays, write_log_csv, write_matrix, CellSummary, MatrixResult, MatrixRun, LOG_HEADER,
};

/// Mixes a base seed with a path of salts (splitmix64 finalizer per step).
pub fn derive_seed(seed: u64, salts: &[u64]) -> u64 {
    let mut x = seed;
    for s in salts.iter().copied().chain(std::iter::once(0x5eed)) {
        x ^= s.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}
