use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ggt_vae::analysis::{analyze, export_analysis, export_latents, LATENTS_CSV};
use ggt_vae::checkpoint::{self, CheckpointMeta, CheckpointMetrics};
use ggt_vae::eval::{evaluate_split, Which};
use ggt_vae::graph::synthetic::{sbm, NodeFeatures};
use ggt_vae::graph::{load_graph, split_edges, write_edges_tsv, write_nodes_tsv, EdgeSplit, Graph, SplitConfig};
use ggt_vae::model::GgtVae;
use ggt_vae::spectral::PeCache;
use ggt_vae::training::{run_seed, train_pe, Aggregate, RunResult};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RunConfig};
use crate::error::CliError;

pub const RUN_JSON: &str = "run.json";
pub const SPLIT_JSON: &str = "split.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const FAILURE_JSON: &str = "failure.json";
pub const NODES_TSV: &str = "nodes.tsv";
pub const EDGES_TSV: &str = "edges.tsv";

/// Per-seed record written to `seed_<n>/run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    #[serde(flatten)]
    pub result: RunResult,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load(nodes: &Path, edges: &Path) -> Result<Graph, CliError> {
    for p in [nodes, edges] {
        if !p.is_file() {
            return Err(CliError::input(format!("file not found: {}", p.display())));
        }
    }
    Ok(load_graph(nodes, edges)?)
}

pub struct SplitArgs {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub config: SplitConfig,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn split(args: &SplitArgs) -> Result<(), CliError> {
    args.config.validate()?;
    let g = load(&args.nodes, &args.edges)?;
    let mut s = split_edges(&g, &args.config, args.seed)?;
    s.graph_hash = Some(g.content_hash());
    let mut text = serde_json::to_string(&s)?;
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())?;
    println!(
        "train {} / val {} / test {} positive edges; val {} / test {} negatives",
        s.train_pos.len(),
        s.val_pos.len(),
        s.test_pos.len(),
        s.val_neg.len(),
        s.test_neg.len()
    );
    Ok(())
}

fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

fn describe(r: &RunResult) -> String {
    format!(
        "seed {}: best epoch {} of {}, val AUC {:.4}, test AUC {:.4}, test AP {:.4}",
        r.seed, r.best_epoch, r.epochs_run, r.val_auc, r.test_auc, r.test_ap
    )
}

/// Trains one seed and writes its split, checkpoint and run record.
fn train_one(cfg: &ExperimentConfig, g: &Graph, out_dir: &Path, seed: u64) -> Result<RunResult, CliError> {
    let dir = seed_dir(out_dir, seed);
    fs::create_dir_all(&dir)?;
    let cache = cfg.pe_cache_dir.as_ref().map(PeCache::new);
    let run = match run_seed(g, &cfg.model, &cfg.train, &cfg.split, seed, cache.as_ref()) {
        Ok(r) => r,
        Err(e) => {
            let failure = serde_json::json!({ "seed": seed, "error": e.to_string() });
            write_json(&dir.join(FAILURE_JSON), &failure)?;
            return Err(e.into());
        }
    };
    let _ = fs::remove_file(dir.join(FAILURE_JSON));
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string();
    let meta = CheckpointMeta {
        model: run.model.config,
        feature_dim: run.model.feature_dim,
        train: Some(cfg.run_config(seed).train),
        seed,
        best_epoch: run.result.best_epoch,
        metrics: Some(CheckpointMetrics::from(&run.result)),
        graph_hash: Some(g.content_hash()),
        nodes_path: Some(abs(&cfg.nodes)),
        edges_path: Some(abs(&cfg.edges)),
    };
    write_json(&dir.join(SPLIT_JSON), &run.split)?;
    checkpoint::save(&dir.join(CHECKPOINT), &run.model, &meta)?;
    write_json(
        &dir.join(RUN_JSON),
        &RunRecord {
            config: cfg.run_config(seed),
            result: run.result.clone(),
        },
    )?;
    Ok(run.result)
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
    /// Worker mode: train this seed only and skip aggregation.
    pub only_seed: Option<u64>,
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::input("no output directory: pass --out-dir or set out_dir in the config"))?;
    fs::create_dir_all(&out_dir)?;
    let g = load(&cfg.nodes, &cfg.edges)?;

    if let Some(seed) = args.only_seed {
        let r = train_one(&cfg, &g, &out_dir, seed)?;
        println!("{}", describe(&r));
        return Ok(());
    }

    let results = if args.jobs > 1 && cfg.seeds.len() > 1 {
        train_parallel(args, &cfg, &out_dir)?
    } else {
        let mut results = Vec::new();
        for &seed in &cfg.seeds {
            let r = train_one(&cfg, &g, &out_dir, seed)?;
            println!("{}", describe(&r));
            results.push(r);
        }
        results
    };
    let agg = Aggregate::from_results(&results)?;
    write_json(&out_dir.join(AGGREGATE_JSON), &agg)?;
    println!("{}", agg.summary());
    Ok(())
}

/// Runs each seed in its own worker process, at most `jobs` at a time.
fn train_parallel(args: &TrainArgs, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunResult>, CliError> {
    let exe = std::env::current_exe()?;
    let config = fs::canonicalize(&args.config)?;
    let out = fs::canonicalize(out_dir)?;
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(cfg.seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                info!("starting worker for seed {seed}");
                let status = Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&config)
                    .arg("--out-dir")
                    .arg(&out)
                    .arg("--seed")
                    .arg(seed.to_string())
                    .stdout(Stdio::null())
                    .status();
                let code = match status {
                    Ok(st) if st.success() => continue,
                    Ok(st) => st.code().unwrap_or(1) as u8,
                    Err(_) => 1,
                };
                failures.lock().unwrap().push((seed, code));
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort_unstable();
    if let Some(&(seed, code)) = failures.first() {
        return Err(CliError {
            code,
            message: format!("worker for seed {seed} failed with exit code {code}"),
        });
    }
    // Reassemble in config order regardless of completion order.
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let rec: RunRecord = read_json(&seed_dir(out_dir, seed).join(RUN_JSON))?;
        println!("{}", describe(&rec.result));
        results.push(rec.result);
    }
    Ok(results)
}

/// A trained model together with the graph and split it is scored on.
struct Loaded {
    model: GgtVae,
    graph: Graph,
    split: EdgeSplit,
}

fn graph_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(NODES_TSV), dir.join(EDGES_TSV))
}

fn load_for_scoring(checkpoint_path: &Path, split_path: &Path, graph_dir: Option<&Path>) -> Result<Loaded, CliError> {
    let (model, meta) =
        checkpoint::load(checkpoint_path).map_err(|e| CliError::input(format!("{}: {e}", checkpoint_path.display())))?;
    let split: EdgeSplit = read_json(split_path)?;
    let (nodes, edges) = match (graph_dir, &meta.nodes_path, &meta.edges_path) {
        (Some(d), _, _) => graph_paths(d),
        (None, Some(n), Some(e)) => (PathBuf::from(n), PathBuf::from(e)),
        _ => return Err(CliError::input("checkpoint does not record its graph; pass --graph")),
    };
    let graph = load(&nodes, &edges)?;
    let hash = graph.content_hash();
    for (what, h) in [("checkpoint", &meta.graph_hash), ("split", &split.graph_hash)] {
        if let Some(h) = h {
            if *h != hash {
                return Err(CliError::input(format!("graph hash mismatch: {what} was built for {h}, graph is {hash}")));
            }
        }
    }
    if graph.feature_dim() != model.feature_dim {
        return Err(CliError::input(format!(
            "graph has {} features, checkpoint expects {}",
            graph.feature_dim(),
            model.feature_dim
        )));
    }
    split.validate(&graph)?;
    Ok(Loaded { model, graph, split })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub which: Which,
    pub auc: f64,
    pub ap: f64,
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub split: PathBuf,
    pub which: Which,
    pub graph: Option<PathBuf>,
    pub json: bool,
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let l = load_for_scoring(&args.checkpoint, &args.split, args.graph.as_deref())?;
    let pe = train_pe(&l.graph, &l.split, l.model.config.pe_dim, None)?;
    let m = evaluate_split(&l.model, l.graph.features(), &pe, &l.split, args.which)?;
    let report = EvalReport {
        which: args.which,
        auc: m.auc,
        ap: m.ap,
    };
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!("{} AUC {:.4}", args.which, m.auc);
        println!("{} AP {:.4}", args.which, m.ap);
    }
    Ok(())
}

pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    pub graph: PathBuf,
    pub split: PathBuf,
    pub out_dir: PathBuf,
    pub exclude_self: bool,
}

pub fn analyze_cmd(args: &AnalyzeArgs) -> Result<(), CliError> {
    let l = load_for_scoring(&args.checkpoint, &args.split, Some(&args.graph))?;
    let pe = train_pe(&l.graph, &l.split, l.model.config.pe_dim, None)?;
    let a = analyze(&l.model, &l.graph, &l.split, &pe, args.exclude_self)?;
    fs::create_dir_all(&args.out_dir)?;
    export_analysis(&args.out_dir, &a.by_distance, &a.report)?;
    export_latents(&args.out_dir.join(LATENTS_CSV), &a.output.mu, l.graph.labels())?;
    println!("diameter {}", a.report.diameter);
    for lg in &a.report.layers {
        println!(
            "layer {}: globality {:.4}, normalized {:.4}",
            lg.layer, lg.globality, lg.normalized_globality
        );
    }
    Ok(())
}

pub struct SbmArgs {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Gaussian feature width; one-hot ids when absent.
    pub feature_dim: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn synth_sbm(args: &SbmArgs) -> Result<(), CliError> {
    if args.blocks.is_empty() || args.blocks.contains(&0) {
        return Err(CliError::input("--blocks needs positive block sizes"));
    }
    for p in [args.p_in, args.p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::input(format!("edge probability {p} outside [0, 1]")));
        }
    }
    if args.feature_dim == Some(0) {
        return Err(CliError::input("--feature-dim must be >= 1"));
    }
    let features = match args.feature_dim {
        Some(d) => NodeFeatures::Gaussian(d),
        None => NodeFeatures::Identity,
    };
    let g = sbm(&args.blocks, args.p_in, args.p_out, features, args.seed);
    fs::create_dir_all(&args.out_dir)?;
    let (nodes, edges) = graph_paths(&args.out_dir);
    write_nodes_tsv(&g, &nodes)?;
    write_edges_tsv(&g, &edges)?;
    println!("{} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}
