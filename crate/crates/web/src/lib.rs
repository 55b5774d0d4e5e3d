//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and strings and returns a JSON document; failures come back as
//! `{"error": "..."}`.

use ggt_vae::analysis::{analyze, attention_by_distance, globality, AttentionByDistance};
use ggt_vae::graph::synthetic::{self, NodeFeatures};
use ggt_vae::graph::{Graph, SpdMatrix, SplitConfig, TrainAdjacency};
use ggt_vae::model::{AttentionRecord, ModelConfig};
use ggt_vae::numerics::Tensor;
use ggt_vae::spectral::{eigh_symmetric, laplacian_pe};
use ggt_vae::training::{run_seed, train_pe, TrainConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

const MAX_NODES: usize = 200;

fn respond(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Builds one of the named graph families with roughly `size` nodes.
pub fn family(name: &str, size: usize, seed: u64) -> Result<Graph, String> {
    if !(2..=MAX_NODES).contains(&size) {
        return Err(format!("size must be between 2 and {MAX_NODES}"));
    }
    Ok(match name {
        "path" => synthetic::path(size),
        "cycle" => synthetic::cycle(size.max(3)),
        "star" => synthetic::star(size - 1),
        "grid" => {
            let side = (size as f64).sqrt().round().max(2.0) as usize;
            synthetic::grid(side, side)
        }
        "sbm" => synthetic::sbm(&[size / 2, size - size / 2], 0.3, 0.02, NodeFeatures::Identity, seed),
        "er" => synthetic::erdos_renyi(size, 4.0 / size as f64, seed),
        other => return Err(format!("unknown graph family {other:?}")),
    })
}

fn edges_json(g: &Graph) -> Value {
    json!(g.edges().iter().map(|&(u, v)| [u, v]).collect::<Vec<_>>())
}

fn labels_json(g: &Graph) -> Value {
    match g.labels() {
        Some(l) => json!(l),
        None => Value::Null,
    }
}

/// Graph drawn at its first two Laplacian eigenvector coordinates.
pub fn spectral_layout_value(name: &str, size: usize, seed: u64) -> Result<Value, String> {
    let g = family(name, size, seed)?;
    let adj = TrainAdjacency::from_edges(g.node_count(), g.edges()).map_err(err)?;
    let pe = laplacian_pe(&adj, 2.min(g.node_count() - 1)).map_err(err)?;
    let coords: Vec<[f64; 2]> = (0..g.node_count())
        .map(|i| {
            let row = pe.matrix.row(i);
            [row[0], row.get(1).copied().unwrap_or(0.0)]
        })
        .collect();
    Ok(json!({
        "nodes": g.node_count(),
        "edges": edges_json(&g),
        "labels": labels_json(&g),
        "coords": coords,
        "eigenvalues": pe.eigenvalues,
    }))
}

#[wasm_bindgen]
pub fn spectral_layout(name: &str, size: usize, seed: u64) -> String {
    respond(spectral_layout_value(name, size, seed))
}

/// Mean attention per distance, averaged over the heads of each layer.
fn layer_curves(abd: &AttentionByDistance) -> Value {
    let curves: Vec<Value> = (0..abd.num_layers)
        .map(|l| {
            let mut by_spd: Vec<(usize, f64)> = Vec::new();
            for h in 0..abd.num_heads {
                for b in &abd.get(l, h).buckets {
                    match by_spd.iter_mut().find(|(d, _)| *d == b.spd) {
                        Some((_, s)) => *s += b.mean_attention,
                        None => by_spd.push((b.spd, b.mean_attention)),
                    }
                }
            }
            let k = abd.num_heads as f64;
            json!(by_spd.iter().map(|(d, s)| json!({"spd": d, "mean_attention": s / k})).collect::<Vec<_>>())
        })
        .collect();
    json!(curves)
}

/// Projects rows of `x` onto their top two principal axes.
fn pca2(x: &Tensor) -> Result<Vec<[f64; 2]>, String> {
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let c = Tensor::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = c.transpose().matmul(&c).map_err(err)?;
    let e = eigh_symmetric(&cov).map_err(err)?;
    let axis = |k: usize| (0..d).map(|j| e.vectors.get(j, d - 1 - k)).collect::<Vec<f64>>();
    let (a, b) = (axis(0), axis(1.min(d - 1)));
    Ok((0..n)
        .map(|i| {
            let r = c.row(i);
            [
                r.iter().zip(&a).map(|(p, q)| p * q).sum(),
                r.iter().zip(&b).map(|(p, q)| p * q).sum(),
            ]
        })
        .collect())
}

/// AUC of the generating block probabilities on the test edges.
fn block_oracle_auc(g: &Graph, pos: &[(usize, usize)], neg: &[(usize, usize)], p_in: f64, p_out: f64) -> f64 {
    let labels = g.labels().unwrap_or_default();
    let score = |&(u, v): &(usize, usize)| if labels[u] == labels[v] { p_in } else { p_out };
    let (mut s, mut total) = (0.0, 0.0);
    for a in pos.iter().map(score) {
        for b in neg.iter().map(score) {
            s += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
            total += 1.0;
        }
    }
    s / total
}

/// Trains a small model on a two-block SBM with one-hot features and
/// reports metrics, the loss curve, attention by distance and a 2-D view
/// of the latent means.
pub fn train_sbm_value(block: usize, p_in: f64, p_out: f64, epochs: usize, seed: u64) -> Result<Value, String> {
    if !(4..=MAX_NODES / 2).contains(&block) {
        return Err(format!("block size must be between 4 and {}", MAX_NODES / 2));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err("edge probabilities must lie in [0, 1]".into());
    }
    let g = synthetic::sbm(&[block, block], p_in, p_out, NodeFeatures::Identity, seed);
    let model_cfg = ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 32,
        latent: 16,
        pe_dim: 8,
        ffn_mult: 2,
    };
    let train_cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    train_cfg.validate().map_err(err)?;
    let run = run_seed(&g, &model_cfg, &train_cfg, &SplitConfig::default(), seed, None).map_err(err)?;
    let pe = train_pe(&g, &run.split, model_cfg.pe_dim, None).map_err(err)?;
    let a = analyze(&run.model, &g, &run.split, &pe, false).map_err(err)?;
    let r = &run.result;
    Ok(json!({
        "nodes": g.node_count(),
        "edges": edges_json(&g),
        "labels": labels_json(&g),
        "best_epoch": r.best_epoch,
        "epochs_run": r.epochs_run,
        "val_auc": r.val_auc,
        "test_auc": r.test_auc,
        "test_ap": r.test_ap,
        "oracle_auc": block_oracle_auc(&g, &run.split.test_pos, &run.split.test_neg, p_in, p_out),
        "loss_curve": r.loss_curve,
        "attention_by_spd": layer_curves(&a.by_distance),
        "globality": a.report.layers,
        "diameter": a.report.diameter,
        "latent_2d": pca2(&a.output.mu)?,
    }))
}

#[wasm_bindgen]
pub fn train_sbm(block: usize, p_in: f64, p_out: f64, epochs: usize, seed: u64) -> String {
    respond(train_sbm_value(block, p_in, p_out, epochs, seed))
}

/// Globality of a synthetic head whose attention decays as
/// `exp(−SPD(u, v) / temperature)`; unreachable pairs get no weight.
pub fn attention_decay_value(name: &str, size: usize, temperature: f64, seed: u64) -> Result<Value, String> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err("temperature must be positive".into());
    }
    let g = family(name, size, seed)?;
    let n = g.node_count();
    let adj = TrainAdjacency::from_edges(n, g.edges()).map_err(err)?;
    let spd = SpdMatrix::compute(&adj);
    let mut a = Tensor::from_fn(n, n, |u, v| spd.get(u, v).map_or(0.0, |d| (-(d as f64) / temperature).exp()));
    for u in 0..n {
        let s: f64 = a.row(u).iter().sum();
        a.row_mut(u).iter_mut().for_each(|x| *x /= s);
    }
    let record = AttentionRecord { layers: vec![vec![a]] };
    let abd = attention_by_distance(&record, &spd).map_err(err)?;
    let diameter = spd.max_finite();
    if diameter == 0 {
        return Err("graph has no edges".into());
    }
    let report = globality(&abd, diameter, false).map_err(err)?;
    Ok(json!({
        "nodes": n,
        "diameter": diameter,
        "buckets": abd.get(0, 0).buckets,
        "globality": report.heads[0].globality,
        "normalized_globality": report.heads[0].normalized_globality,
    }))
}

#[wasm_bindgen]
pub fn attention_decay(name: &str, size: usize, temperature: f64, seed: u64) -> String {
    respond(attention_decay_value(name, size, temperature, seed))
}
