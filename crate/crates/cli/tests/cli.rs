use std::fs;
use std::process::Command;

use rcbf_core::task::TaskSpec;

fn rcbf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rcbf"))
}

#[test]
fn gen_task_prints_a_valid_task() {
    let out = rcbf().args(["gen-task", "--seed", "4"]).output().unwrap();
    assert!(out.status.success());
    let task = TaskSpec::from_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    task.validate(&rcbf_core::SafetyParams::default()).unwrap();
    assert_eq!(task.seed, 4);
}

#[test]
fn run_writes_logs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let task_file = dir.path().join("task.toml");
    let gen = rcbf().args(["gen-task", "--seed", "2"]).output().unwrap();
    fs::write(&task_file, gen.stdout).unwrap();
    let out_dir = dir.path().join("out");
    let status = rcbf()
        .args(["run", "--delay", "constant:200ms", "--margin", "on", "--seed", "2", "--task"])
        .arg(&task_file)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let log = fs::read_to_string(out_dir.join("task00.csv")).unwrap();
    assert!(log.starts_with("t,px,py,pz,ux,uy,uz,sigma_k,min_surf_dist,solve_ms,rtt_est_ms\n"));
    assert!(log.lines().count() > 10);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn bad_delay_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcbf()
        .args(["run", "--tasks", "1", "--delay", "uniform:0.3,0.1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
