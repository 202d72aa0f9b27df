use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn m3i(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m3i"))
        .args(args)
        .env_remove("M3I_OUTPUT_DIR")
        .output()
        .expect("spawn m3i")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "\
[run]
method = mim_pixel
batch_size = 4
max_steps = 3
checkpoint_every = 2

[data]
resolution = 16
train_size = 16
val_size = 8

[model]
dim = 8
depth = 1
heads = 2
decoder_dim = 8
decoder_depth = 1
decoder_heads = 2
embed_dim = 8
";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.ini");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_methods_prints_the_catalog() {
    let o = m3i(&["list-methods"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["m3i", "mim_pixel", "instance_discrimination", "image_classification", "clip"] {
        assert!(out.lines().any(|l| l.split('\t').next() == Some(name)), "{name} missing from\n{out}");
    }
}

#[test]
fn oracle_suite_passes() {
    let o = m3i(&["oracle", "--trials", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.lines().count() >= 10);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn zero_trials_is_a_config_error() {
    assert_eq!(m3i(&["oracle", "--trials", "0"]).status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nmethod = mim_pixel\nbogus = 1\n");
    let o = m3i(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn unknown_method_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nmethod = nonsense\n");
    assert_eq!(m3i(&["train", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn nan_loss_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("checkpoint_every = 2", "nan_inject_step = 1"));
    let out = dir.path().join("out");
    let o = m3i(&["train", "--config", &cfg, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gen_data_writes_a_container() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("data.ini");
    fs::write(&spec, "[data]\nresolution = 16\ntrain_size = 6\nval_size = 2\n").unwrap();
    let out = dir.path().join("shapes");
    let run = || m3i(&["gen-data", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let first = run();
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(out.join("index.tsv").exists());
    assert_eq!(fs::read_dir(out.join("records")).unwrap().count(), 8);
    assert_eq!(stdout(&first), stdout(&run()));
}

#[test]
fn train_resume_probe_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_m3i"))
        .args(["train", "--config", &cfg])
        .env("M3I_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = out.join("metrics.jsonl");
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
    assert!(out.join("final.ckpt").exists());

    let resumed = dir.path().join("resumed");
    let ckpt = out.join("step_000002.ckpt");
    let o = m3i(&["train", "--resume", ckpt.to_str().unwrap(), "--output-dir", resumed.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let last = |p: &Path| fs::read_to_string(p).unwrap().lines().last().unwrap().to_string();
    assert_eq!(last(&log), last(&resumed.join("metrics.jsonl")));

    let o = m3i(&["eval-probe", "--ckpt", out.join("final.ckpt").to_str().unwrap(), "--probe-epochs", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let acc = v["probe_top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(v["effective_rank"].as_f64().unwrap() >= 1.0);

    let o = m3i(&["plot", "--log", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("losses.svg").exists());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let o = m3i(&["eval-probe", "--ckpt", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
