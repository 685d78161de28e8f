//! Exit codes and messages of the `coldsim` binary.

use std::path::Path;
use std::process::{Command, Output};

fn coldsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coldsim"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = coldsim(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("train-backbone"));
}

#[test]
fn usage_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        coldsim(dir.path(), &["no-such-command"]).status.code(),
        Some(1)
    );
    assert_eq!(
        coldsim(dir.path(), &["train-filter", "--variant", "X"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        coldsim(dir.path(), &["sweep", "--param", "K"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn missing_inputs_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = coldsim(dir.path(), &["split"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coldsim ingest"), "{}", stderr(&o));

    let o = coldsim(
        dir.path(),
        &["--config", "/nonexistent/config.json", "split"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_sweep_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("planted.json");
    let o = coldsim(dir.path(), &["default-config", "--preset", "planted"]);
    std::fs::write(&cfg, &o.stdout).unwrap();
    let c = cfg.to_str().unwrap();
    for step in [
        &["ingest"][..],
        &["split"],
        &["train-backbone"],
        &["cache-content"],
    ] {
        let o = coldsim(dir.path(), &[&["--config", c][..], step].concat());
        assert!(o.status.success(), "{step:?}: {}", stderr(&o));
    }
    let o = coldsim(
        dir.path(),
        &["--config", c, "sweep", "--param", "K", "--values", "0"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn planted_ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = coldsim(dir.path(), &["ingest", "--dataset", "synthetic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(
        text.starts_with("users 200 items 120 interactions "),
        "{text}"
    );
    assert!(dir.path().join("truth.json").exists());
}
