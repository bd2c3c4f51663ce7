use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hybridnas::config::RunConfig;
use hybridnas::search_space::{decode, ArchConfig, Genotype};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybridnas"))
}

const SMALL: &[&str] = &[
    "task.n_train=16",
    "task.n_val=8",
    "schedule.t_adapt=2",
    "schedule.t_joint=3",
    "schedule.t_final=5",
    "evolution.pop_size=8",
    "evolution.generations=3",
    "devices.timed_runs=5",
    "devices.warmup_runs=1",
];

fn run(args: &[&str], out: &Path, extra: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for s in SMALL.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.arg("--set").arg(format!("output.dir={}", toml_string(out)));
    cmd.output().expect("binary runs")
}

fn toml_string(p: &Path) -> String {
    format!("\"{}\"", p.display())
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn template_parses_to_defaults() {
    let o = bin().arg("template").output().unwrap();
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(RunConfig::parse(&text, &[]).unwrap(), RunConfig::default());
}

#[test]
fn train_writes_checkpoint_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["train"], &a, &["seed=7"]));
    ok(&run(&["train"], &b, &["seed=7"]));
    let log = fs::read_to_string(a.join("loss_log.csv")).unwrap();
    assert!(log.lines().count() > 1);
    assert_eq!(fs::read(a.join("supernet.ckpt")).unwrap(), fs::read(b.join("supernet.ckpt")).unwrap());
    assert!(a.join("train.manifest.json").exists());
}

#[test]
fn invalid_weight_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train"], dir.path(), &["loss_weights.theta=1.3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("loss_weights.theta"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench"], dir.path(), &["bench.workers=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("workers"));
}

#[test]
fn search_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["search"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[derive(serde::Deserialize)]
struct ArchiveRow {
    genotype: Genotype,
    config: ArchConfig,
}

#[test]
fn search_outputs_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    ok(&run(&["train"], &full, &[]));
    ok(&run(&["search"], &full, &[]));
    let traj = fs::read_to_string(full.join("trajectory.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), 3);
    let archive: Vec<ArchiveRow> = serde_json::from_str(&fs::read_to_string(full.join("archive.json")).unwrap()).unwrap();
    assert!(!archive.is_empty());
    let space = RunConfig::default().space;
    for row in &archive {
        assert_eq!(decode(&row.genotype, &space).unwrap(), row.config);
    }
    assert!(full.join("fitness/gen_003.csv").exists());

    let ckpt = full.join("supernet.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    ok(&run(&["search", "--checkpoint", ckpt, "--until", "1"], &split, &[]));
    assert_eq!(fs::read_to_string(split.join("trajectory.jsonl")).unwrap().lines().count(), 1);
    ok(&run(&["search", "--checkpoint", ckpt, "--resume"], &split, &[]));
    for f in ["archive.json", "trajectory.jsonl", "fitness/gen_002.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }

    let o = run(&["report"], &full, &[]);
    ok(&o);
    let report = fs::read_to_string(full.join("report.csv")).unwrap();
    assert!(report.starts_with("generation,metric,value\n"));
    assert!(report.lines().any(|l| l.starts_with("3,archive_hv,")));
}

#[test]
fn bench_table_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench"], dir.path(), &[]);
    ok(&o);
    let text = fs::read_to_string(dir.path().join("throughput.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert!(rows.len() >= 3);
    let seq: f64 = rows.iter().find(|r| r[0] == "sequential").expect("sequential row")[3].parse().unwrap();
    for r in &rows {
        let (t, s): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!((seq / t - s).abs() < 1e-3, "{r:?}");
    }
}

#[test]
fn consistency_reports_seed_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [
        "consistency.n_arch=4",
        "consistency.seeds=2",
        "consistency.standalone_steps=5",
        "consistency.pool_size=2",
    ];
    let o = run(&["consistency", "--strategy", "progressive", "--strategy", "random_sampling"], dir.path(), &extra);
    ok(&o);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("strategy,seeds,n_arch,tau_mean,tau_std\n"));
    assert!(stdout.contains("progressive,2,4,"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("consistency.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 2);
    assert!(report["summaries"][0]["std"].is_number());
    let scatter = fs::read_to_string(dir.path().join("consistency_scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 2 * 2 * 4);

    let missing = dir.path().join("none.ckpt");
    let arg = format!("progressive={}", missing.display());
    let o = run(&["consistency", "--checkpoint", &arg], dir.path(), &extra);
    assert_eq!(o.status.code(), Some(2));
}
