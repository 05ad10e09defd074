use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
version = 1
seeds = [0]

[collect]
push_trajectories = 30
pick_trajectories = 30

[skills]
lstm_hidden = 8
mlp_width = 16
mlp_layers = 2
flow_hidden = 8

[skill_training]
steps = 10
batch_size = 16
log_every = 5
"#;

fn reskill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reskill")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "version = 1\n[rl]\ntotal_stepz = 10\n");
    let o = reskill(&["collect", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("total_stepz"), "{}", stderr(&o));
}

#[test]
fn missing_version_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seeds = [1]\n");
    let o = reskill(&["collect", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
}

#[test]
fn empty_collection_plan_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "version = 1\n[collect]\npush_trajectories = 0\npick_trajectories = 0\n");
    let o = reskill(&["collect", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!dir.path().join("dataset.rskd").exists());
}

#[test]
fn collect_prints_a_summary_and_records_the_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = reskill(&["collect", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("60 trajectories") && text.contains("rejection rate"), "{text}");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["history"][0]["command"], "collect");
    assert!(manifest["artifacts"]["dataset.rskd"]["sha256"].is_string());
}

#[test]
fn plot_rejects_an_empty_metrics_file() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "mode,task,seed,step,episode,success,success_rate,return,w\n").unwrap();
    let o = reskill(&["plot", "--out", dir.path().to_str().unwrap(), csv.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no rows"), "{}", stderr(&o));
}

#[test]
fn latent_dump_beyond_the_dataset_fails_and_within_writes_3n_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    for cmd in ["collect", "train-skills"] {
        let r = reskill(&[cmd, "--config", &cfg, "--out", o]);
        assert!(r.status.success(), "{cmd}: {}", stderr(&r));
    }
    let r = reskill(&["latent-dump", "--config", &cfg, "--out", o, "--points", "100000"]);
    assert!(!r.status.success());
    assert!(stderr(&r).contains("only"), "{}", stderr(&r));

    let r = reskill(&["latent-dump", "--config", &cfg, "--out", o, "--points", "25"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let mut rd = csv::Reader::from_path(out.join("latent.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().len(), 2 + 4);
    assert_eq!(rd.records().count(), 75);
}

#[test]
fn eval_with_a_bad_checkpoint_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let bogus = dir.path().join("bogus.rskc");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = reskill(&["eval", "--checkpoint", bogus.to_str().unwrap(), "--task", "slippery-push", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));

    let o = reskill(&["eval", "--task", "slippery-push", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn scripted_and_random_eval_report_an_interval() {
    let dir = TempDir::new().unwrap();
    let o = reskill(&["eval", "--policy", "push", "--task", "slippery-push", "--episodes", "10", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = stdout(&o).lines().last().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&last).unwrap();
    assert_eq!(v["episodes"], 10);
    assert!(v["ci_low"].as_f64().unwrap() <= v["rate"].as_f64().unwrap());
}

#[test]
fn unknown_task_and_mode_are_rejected() {
    let o = reskill(&["eval", "--policy", "random", "--task", "juggling"]);
    assert!(!o.status.success());
    let o = reskill(&["train-rl", "--mode", "magic", "--out", "/nonexistent/never"]);
    assert!(!o.status.success());
}
