#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn splatground(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatground"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its run directory.
pub fn run_ok(out: &Path, args: &[&str]) -> PathBuf {
    let o = splatground(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8(o.stdout).unwrap();
    let last = stdout.lines().last().expect("stdout is not empty");
    PathBuf::from(last.strip_prefix("run: ").expect("last line names the run directory"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic scene plus a trained field. Returns (generated dir, field dir).
pub fn prepared(out: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["gen-synthetic"];
    args.extend_from_slice(extra);
    let gen = run_ok(out, &args);
    let field = run_ok(
        out,
        &[
            "build-field",
            "--scene",
            s(&gen.join("scene.ply")),
            "--cameras",
            s(&gen.join("cameras.json")),
            "--supervision",
            s(&gen.join("supervision/manifest.json")),
        ],
    );
    (gen, field)
}

pub fn ground_args<'a>(field: &'a Path, gen: &'a Path, query: &'a str) -> Vec<String> {
    vec![
        "ground".into(),
        "--scene".into(),
        s(&field.join("scene.ply")).into(),
        "--cameras".into(),
        s(&field.join("cameras.json")).into(),
        "--classifier".into(),
        s(&field.join("classifier.json")).into(),
        "--query".into(),
        query.into(),
        "--backend".into(),
        "oracle".into(),
        "--manifest".into(),
        s(&gen.join("benchmark.json")).into(),
    ]
}
