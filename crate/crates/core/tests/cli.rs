mod common;

use std::path::Path;
use std::process::Command;

fn run(out: &Path, workers: usize) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_gasket-forms"))
        .args(["all", "--config"])
        .arg(common::golden_dir().join("config.json"))
        .arg("--out")
        .arg(out)
        .args(["--workers", &workers.to_string()])
        .output()
        .expect("binary runs");
    status.status.code().expect("exit code")
}

/// Every output file, with the manifest timestamp removed.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("timestamp");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect()
}

#[test]
fn all_is_byte_identical_across_runs_and_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    let codes = [run(&dirs[0], 8), run(&dirs[1], 8), run(&dirs[2], 1)];
    assert!(codes.iter().all(|c| *c == 0 || *c == 1), "exit codes {codes:?}");
    assert!(codes.iter().all(|c| *c == codes[0]));
    let first = snapshot(&dirs[0]);
    assert_eq!(first.len(), 9, "four suites as csv + json, plus the manifest");
    assert_eq!(first, snapshot(&dirs[1]), "rerun differs");
    assert_eq!(first, snapshot(&dirs[2]), "1 vs 8 workers differ");
}

#[test]
fn invalid_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"version": 1, "unknown": true}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gasket-forms"))
        .args(["monotone", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));
}

#[test]
fn dump_gasket_lists_every_vertex() {
    let out = Command::new(env!("CARGO_BIN_EXE_gasket-forms"))
        .args(["dump-gasket", "--level", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    // header plus (3^3 + 3) / 2 vertices
    assert_eq!(text.lines().count(), 1 + 15);
}
