//! Delay x margin experiment grid, summary tables and CSV output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::delay::DelayModel;
use crate::error::Result;
use crate::task::TaskSpec;

use super::closed_loop::{run_task, RunConfig, RunResult, TickRecord};
use super::derive_seed;

pub const LOG_HEADER: &str = "t,px,py,pz,ux,uy,uz,sigma_k,min_surf_dist,solve_ms,rtt_est_ms";

/// The four delay columns: none, Gaussian 50/20 ms, constant 200 ms, uniform 50-200 ms.
pub fn table_delays() -> Vec<DelayModel> {
    vec![
        DelayModel::None,
        DelayModel::Gaussian { mean: 0.05, std: 0.02 },
        DelayModel::Constant(0.2),
        DelayModel::Uniform { lo: 0.05, hi: 0.2 },
    ]
}

#[derive(Debug, Clone)]
pub struct MatrixRun {
    pub task: usize,
    pub delay: usize,
    pub margin: bool,
    pub seed: u64,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub delay: DelayModel,
    pub margin: bool,
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    pub dmin_violations: usize,
    pub min_surface_distance: f64,
    /// Time-averaged sigma over all control ticks of the cell.
    pub mean_sigma: f64,
}

impl CellSummary {
    pub fn success_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.successes as f64 / self.runs as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixResult {
    pub delays: Vec<DelayModel>,
    pub margins: Vec<bool>,
    pub runs: Vec<MatrixRun>,
    pub cells: Vec<CellSummary>,
}

impl MatrixResult {
    pub fn cell(&self, delay: usize, margin: bool) -> Option<&CellSummary> {
        let m = self.margins.iter().position(|&f| f == margin)?;
        self.cells.get(delay * self.margins.len() + m)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "delay,margin,runs,successes,success_rate,collisions,dmin_violations,min_surf_dist,mean_sigma_k\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.4},{},{},{:.6},{:.6}",
                c.delay,
                on_off(c.margin),
                c.runs,
                c.successes,
                c.success_rate(),
                c.collisions,
                c.dmin_violations,
                c.min_surface_distance,
                c.mean_sigma
            );
        }
        s
    }

    /// Success rates with one row per margin flag and one column per delay.
    pub fn table(&self) -> String {
        let labels: Vec<String> = self.delays.iter().map(|d| d.to_string()).collect();
        let width = labels.iter().map(|l| l.len()).max().unwrap_or(0).max(8);
        let mut s = format!("{:<10}", "sigma_k");
        for l in &labels {
            let _ = write!(s, " | {l:>width$}");
        }
        s.push('\n');
        for &m in &self.margins {
            let _ = write!(s, "{:<10}", if m { "with" } else { "without" });
            for d in 0..self.delays.len() {
                let text = match self.cell(d, m) {
                    Some(c) => format!("{}/{} ({:.0}%)", c.successes, c.runs, 100.0 * c.success_rate()),
                    None => "-".into(),
                };
                let _ = write!(s, " | {text:>width$}");
            }
            s.push('\n');
        }
        s
    }
}

fn on_off(margin: bool) -> &'static str {
    if margin {
        "on"
    } else {
        "off"
    }
}

/// Runs every (task, delay, margin) combination in parallel. Both margin
/// flags of a (task, delay) pair share the same run seed, so the delay
/// sequences differ only through the controller's reaction.
pub fn run_matrix(
    tasks: &[TaskSpec],
    delays: &[DelayModel],
    margins: &[bool],
    seed: u64,
    base: &RunConfig,
) -> MatrixResult {
    let mut jobs = Vec::new();
    for (t, _) in tasks.iter().enumerate() {
        for (d, _) in delays.iter().enumerate() {
            for &m in margins {
                jobs.push((t, d, m, derive_seed(seed, &[t as u64, d as u64])));
            }
        }
    }
    let runs: Vec<MatrixRun> = jobs
        .into_par_iter()
        .map(|(t, d, margin, run_seed)| {
            let run = RunConfig {
                delay: delays[d].clone(),
                margin,
                seed: run_seed,
                ..base.clone()
            };
            MatrixRun {
                task: t,
                delay: d,
                margin,
                seed: run_seed,
                result: run_task(&tasks[t], &run),
            }
        })
        .collect();

    let mut cells = Vec::new();
    for (d, model) in delays.iter().enumerate() {
        for &m in margins {
            let group: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.delay == d && r.margin == m)
                .map(|r| &r.result)
                .collect();
            let ticks: usize = group.iter().map(|r| r.log.len()).sum();
            let sigma_sum: f64 = group.iter().flat_map(|r| r.log.iter()).map(|row| row.sigma).sum();
            cells.push(CellSummary {
                delay: model.clone(),
                margin: m,
                runs: group.len(),
                successes: group.iter().filter(|r| r.success).count(),
                collisions: group.iter().filter(|r| r.collision).count(),
                dmin_violations: group.iter().filter(|r| r.dmin_violation).count(),
                min_surface_distance: group
                    .iter()
                    .map(|r| r.min_surface_distance)
                    .fold(f64::INFINITY, f64::min),
                mean_sigma: if ticks == 0 { 0.0 } else { sigma_sum / ticks as f64 },
            });
        }
    }
    MatrixResult {
        delays: delays.to_vec(),
        margins: margins.to_vec(),
        runs,
        cells,
    }
}

pub fn write_log_csv(mut w: impl Write, log: &[TickRecord]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in log {
        writeln!(
            w,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            r.t,
            r.position.x,
            r.position.y,
            r.position.z,
            r.command.x,
            r.command.y,
            r.command.z,
            r.sigma,
            r.min_surf_dist,
            r.solve_ms,
            r.rtt_est_ms
        )?;
    }
    Ok(())
}

/// Writes `summary.csv`, `summary.txt` and one log per run under `runs/`.
pub fn write_matrix(dir: impl AsRef<Path>, matrix: &MatrixResult) -> Result<()> {
    let dir = dir.as_ref();
    let runs_dir = dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    std::fs::write(dir.join("summary.csv"), matrix.summary_csv())?;
    std::fs::write(dir.join("summary.txt"), matrix.table())?;
    for r in &matrix.runs {
        let name = format!(
            "task{:02}_d{}_{}_sigma-{}.csv",
            r.task,
            r.delay,
            matrix.delays[r.delay].label(),
            on_off(r.margin)
        );
        let file = std::io::BufWriter::new(std::fs::File::create(runs_dir.join(name))?);
        write_log_csv(file, &r.result.log)?;
    }
    Ok(())
}
