mod common;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use common::{ggtvae, ok, path, read_json, synth, write_config};
use serde_json::json;

/// A 100-node ring: exactly 100 edges.
fn ring(dir: &Path) {
    let nodes: String = (0..100).map(|i| format!("{i}\t1\n")).collect();
    let edges: String = (0..100).map(|i| format!("{i}\t{}\n", (i + 1) % 100)).collect();
    fs::write(dir.join("nodes.tsv"), nodes).unwrap();
    fs::write(dir.join("edges.tsv"), edges).unwrap();
}

#[test]
fn split_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    ring(dir.path());
    let (nodes, edges) = (dir.path().join("nodes.tsv"), dir.path().join("edges.tsv"));
    let before = fs::read(&edges).unwrap();
    let mut files = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let stdout = ok(&[
            "split",
            "--nodes",
            path(&nodes),
            "--edges",
            path(&edges),
            "--seed",
            "7",
            "--out",
            path(&out),
        ]);
        assert!(stdout.contains("train 85 / val 5 / test 10"), "{stdout}");
        files.push(fs::read(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(fs::read(&edges).unwrap(), before);
}

#[test]
fn split_missing_edges_file() {
    let dir = tempfile::tempdir().unwrap();
    ring(dir.path());
    let out = dir.path().join("split.json");
    let o = ggtvae(&[
        "split",
        "--nodes",
        path(&dir.path().join("nodes.tsv")),
        "--edges",
        path(&dir.path().join("missing.tsv")),
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
    assert!(!out.exists());
}

fn small_config(dir: &Path, seeds: &[u64], lr: f64) -> std::path::PathBuf {
    write_config(
        dir,
        "experiment.json",
        &json!({
            "nodes": "graph/nodes.tsv",
            "edges": "graph/edges.tsv",
            "seeds": seeds,
            "model": {"layers": 1, "heads": 2, "hidden": 16, "latent": 8, "pe_dim": 4, "ffn_mult": 2},
            "train": {"epochs": 15, "lr": lr, "patience": 10},
        }),
    )
}

/// Trains two seeds on a small SBM and returns the output directory.
fn trained(dir: &Path) -> std::path::PathBuf {
    synth(&dir.join("graph"), "20,20", 4);
    let cfg = small_config(dir, &[1, 2], 5e-3);
    let out = dir.join("runs");
    let stdout = ok(&["train", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert!(stdout.contains("AUC ") && stdout.contains(" ± "), "{stdout}");
    out
}

fn pairs(v: &serde_json::Value) -> HashSet<(u64, u64)> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|p| (p[0].as_u64().unwrap(), p[1].as_u64().unwrap()))
        .collect()
}

#[test]
fn eval_reproduces_recorded_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let seed = out.join("seed_1");
    let run = read_json(&seed.join("run.json"));
    let (ckpt, split) = (seed.join("checkpoint.bin"), seed.join("split.json"));
    for (which, key) in [("test", "test_auc"), ("val", "val_auc")] {
        let stdout = ok(&["eval", "--checkpoint", path(&ckpt), "--split", path(&split), "--which", which, "--json"]);
        let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
        assert_eq!(report["auc"], run[key], "{which}");
    }
    let text = ok(&["eval", "--checkpoint", path(&ckpt), "--split", path(&split)]);
    let auc = run["test_auc"].as_f64().unwrap();
    assert!(text.contains(&format!("test AUC {auc:.4}")), "{text}");

    let s = read_json(&split);
    let val: HashSet<_> = pairs(&s["val_pos"]).union(&pairs(&s["val_neg"])).copied().collect();
    let test: HashSet<_> = pairs(&s["test_pos"]).union(&pairs(&s["test_neg"])).copied().collect();
    assert!(val.is_disjoint(&test));

    let agg = read_json(&out.join("aggregate.json"));
    assert_eq!(agg["n_seeds"], 2);
    let mean = (auc + read_json(&out.join("seed_2/run.json"))["test_auc"].as_f64().unwrap()) / 2.0;
    assert!((agg["mean_auc"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn eval_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let seed = out.join("seed_1");
    let split = seed.join("split.json");

    let mut bytes = fs::read(seed.join("checkpoint.bin")).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0xff;
    let bad = dir.path().join("corrupt.bin");
    fs::write(&bad, &bytes).unwrap();
    let o = ggtvae(&["eval", "--checkpoint", path(&bad), "--split", path(&split)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));

    fs::write(&bad, &bytes[..n / 2]).unwrap();
    assert_eq!(ggtvae(&["eval", "--checkpoint", path(&bad), "--split", path(&split)]).status.code(), Some(2));

    let other = dir.path().join("other");
    synth(&other, "20,20", 5);
    let o = ggtvae(&[
        "eval",
        "--checkpoint",
        path(&seed.join("checkpoint.bin")),
        "--split",
        path(&split),
        "--graph",
        path(&other),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash mismatch"));
}

#[test]
fn analyze_outputs_validate_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let seed = out.join("seed_2");
    let mut snapshots = Vec::new();
    for name in ["a", "b"] {
        let target = dir.path().join(name);
        ok(&[
            "analyze",
            "--checkpoint",
            path(&seed.join("checkpoint.bin")),
            "--graph",
            path(&dir.path().join("graph")),
            "--split",
            path(&seed.join("split.json")),
            "--out-dir",
            path(&target),
        ]);
        let files: Vec<Vec<u8>> = ["attention_by_spd.csv", "globality.csv", "latents.csv"]
            .iter()
            .map(|f| fs::read(target.join(f)).unwrap())
            .collect();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);

    let target = dir.path().join("a");
    let mut r = csv::Reader::from_path(target.join("globality.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["layer", "head", "globality", "normalized_globality"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 + 1);
    for row in &rows {
        let g: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&g));
    }

    let mut r = csv::Reader::from_path(target.join("attention_by_spd.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["layer", "head", "spd", "mean_attention", "pair_count"]);
    let keys: Vec<(usize, usize, usize)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[1].parse().unwrap(), rec[2].parse().unwrap())
        })
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));

    let mut r = csv::Reader::from_path(target.join("latents.csv")).unwrap();
    assert_eq!(r.records().count(), 40);
}

#[test]
fn unknown_config_key_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("graph"), "10,10", 1);
    let cfg = write_config(
        dir.path(),
        "bad.json",
        &json!({"nodes": "graph/nodes.tsv", "edges": "graph/edges.tsv", "train": {"learning_rate": 0.1}}),
    );
    let o = ggtvae(&["train", "--config", path(&cfg), "--out-dir", path(&dir.path().join("runs"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn divergence_exits_3_with_failure_record() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("graph"), "20,20", 4);
    let cfg = small_config(dir.path(), &[3], 1e12);
    let out = dir.path().join("runs");
    let o = ggtvae(&["train", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let failure = read_json(&out.join("seed_3/failure.json"));
    assert_eq!(failure["seed"], 3);
    assert!(!out.join("aggregate.json").exists());
}

#[test]
fn parallel_workers_match_sequential() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("graph"), "15,15", 2);
    let cfg = small_config(dir.path(), &[1, 2, 3], 5e-3);
    let (seq, par) = (dir.path().join("seq"), dir.path().join("par"));
    ok(&["train", "--config", path(&cfg), "--out-dir", path(&seq)]);
    ok(&["train", "--config", path(&cfg), "--out-dir", path(&par), "--jobs", "2"]);
    assert_eq!(
        fs::read(seq.join("aggregate.json")).unwrap(),
        fs::read(par.join("aggregate.json")).unwrap()
    );
}

#[test]
fn bad_flags_are_input_errors() {
    assert_eq!(ggtvae(&["split", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = ggtvae(&["synth-sbm", "--p-in", "1.5", "--out-dir", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
