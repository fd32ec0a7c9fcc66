use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rcbf_core::delay::DelayModel;
use rcbf_core::harness::{
    run_matrix, run_task, run_task_realtime, table_delays, write_log_csv, write_matrix, RunConfig, RunResult,
};
use rcbf_core::plant::PlantModel;
use rcbf_core::task::{generate_task, generate_tasks, TaskGenConfig, TaskSpec};
use rcbf_core::SafetyParams;
use rcbf_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "rcbf", version, about = "Delay-robust CBF-MPC teleoperation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        matches!(v, OnOff::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Plant {
    Ideal,
    Force,
}

impl From<Plant> for PlantModel {
    fn from(p: Plant) -> Self {
        match p {
            Plant::Ideal => PlantModel::Ideal,
            Plant::Force => PlantModel::force_pid_default(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run generated (or given) tasks under one delay model and margin setting.
    Run {
        #[arg(long, default_value_t = 10)]
        tasks: usize,
        /// none | gaussian:MEAN,STD | constant:D | uniform:LO,HI | trace:FILE (seconds, or suffix ms)
        #[arg(long, default_value = "none")]
        delay: DelayModel,
        #[arg(long, value_enum, default_value = "on")]
        margin: OnOff,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Pace the loop against the wall clock.
        #[arg(long)]
        realtime: bool,
        /// Run this task file instead of generating tasks.
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long, default_value_t = 120.0)]
        time_limit: f64,
        #[arg(long, value_enum, default_value = "ideal")]
        plant: Plant,
    },
    /// Run every task under each delay column with and without the margin.
    Matrix {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        tasks: usize,
    },
    /// Print a generated task.
    GenTask {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the live loop to a WebSocket operator.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "none")]
        delay: DelayModel,
        #[arg(long, value_enum, default_value = "on")]
        margin: OnOff,
    },
}

fn load_task(path: &Path) -> Result<TaskSpec, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let task = TaskSpec::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    task.validate(&SafetyParams::default())
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(task)
}

fn summary_line(i: usize, r: &RunResult) -> String {
    format!(
        "{i},{},{},{},{}/{},{:.6},{:.2}",
        r.success,
        r.collision,
        r.dmin_violation,
        r.targets_reached,
        r.targets_total,
        r.min_surface_distance,
        r.finish_time
    )
}

fn run(args: Command) -> Result<(), String> {
    let safety = SafetyParams::default();
    let gen = TaskGenConfig::default();
    match args {
        Command::Run {
            tasks,
            delay,
            margin,
            seed,
            out,
            realtime,
            task,
            time_limit,
            plant,
        } => {
            let tasks = match task {
                Some(path) => vec![load_task(&path)?],
                None => generate_tasks(seed, tasks, &gen, &safety).map_err(|e| e.to_string())?,
            };
            fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let config = RunConfig {
                delay,
                margin: margin.into(),
                seed,
                time_limit,
                plant: plant.into(),
                ..RunConfig::default()
            };
            let mut summary = String::from("task,success,collision,dmin_violation,targets,min_surf_dist,finish_t\n");
            let mut successes = 0;
            for (i, task) in tasks.iter().enumerate() {
                let run = RunConfig {
                    seed: rcbf_core::harness::derive_seed(seed, &[i as u64]),
                    ..config.clone()
                };
                let r = if realtime {
                    run_task_realtime(task, &run)
                } else {
                    run_task(task, &run)
                };
                successes += usize::from(r.success);
                let line = summary_line(i, &r);
                println!("{line}");
                summary.push_str(&line);
                summary.push('\n');
                let file = fs::File::create(out.join(format!("task{i:02}.csv"))).map_err(|e| e.to_string())?;
                write_log_csv(BufWriter::new(file), &r.log).map_err(|e| e.to_string())?;
            }
            fs::write(out.join("summary.csv"), summary).map_err(|e| e.to_string())?;
            println!("{successes}/{} tasks succeeded", tasks.len());
        }
        Command::Matrix { seed, out, tasks } => {
            let tasks = generate_tasks(seed, tasks, &gen, &safety).map_err(|e| e.to_string())?;
            let m = run_matrix(&tasks, &table_delays(), &[true, false], seed, &RunConfig::default());
            write_matrix(&out, &m).map_err(|e| e.to_string())?;
            print!("{}", m.table());
        }
        Command::GenTask { seed } => {
            let task = generate_task(seed, &gen, &safety).map_err(|e| e.to_string())?;
            print!("{}", task.to_text());
        }
        Command::Serve {
            bind,
            task,
            seed,
            delay,
            margin,
        } => {
            let task = match task {
                Some(path) => load_task(&path)?,
                None => generate_task(seed, &gen, &safety).map_err(|e| e.to_string())?,
            };
            let mut config = ServiceConfig {
                seed,
                ..ServiceConfig::default()
            };
            config.run.delay = delay;
            config.run.margin = margin.into();
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(rcbf_service::serve(bind, task, config))
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
