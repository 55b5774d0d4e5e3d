#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ggtvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggtvae")).args(args).output().unwrap()
}

pub fn ok(args: &[&str]) -> String {
    let out = ggtvae(args);
    assert!(
        out.status.success(),
        "ggtvae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes an SBM graph with one-hot features into `dir`.
pub fn synth(dir: &Path, blocks: &str, seed: u64) {
    ok(&["synth-sbm", "--blocks", blocks, "--seed", &seed.to_string(), "--out-dir", path(dir)]);
}

pub fn write_config(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}
