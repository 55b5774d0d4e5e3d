//! Attention versus shortest-path distance, globality scores, and CSV
//! exports for plotting.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{EdgeSplit, Graph, SpdMatrix, TrainAdjacency};
use crate::model::{AttentionRecord, ForwardOutput, GgtVae};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceBucket {
    pub spd: usize,
    pub mean_attention: f64,
    pub pair_count: usize,
}

/// Mean attention per realized distance for one head. Buckets are sorted by
/// distance and only realized distances appear.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDistances {
    pub layer: usize,
    pub head: usize,
    pub buckets: Vec<DistanceBucket>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionByDistance {
    pub num_layers: usize,
    pub num_heads: usize,
    /// Ordered by `(layer, head)`.
    pub heads: Vec<HeadDistances>,
}

impl AttentionByDistance {
    pub fn get(&self, layer: usize, head: usize) -> &HeadDistances {
        &self.heads[layer * self.num_heads + head]
    }
}

/// Averages `attn[u][v]` over ordered pairs grouped by `SPD(u, v)`. The
/// diagonal is distance 0; unreachable pairs are skipped.
pub fn attention_by_distance(attn: &AttentionRecord, spd: &SpdMatrix) -> Result<AttentionByDistance> {
    let n = spd.node_count();
    let mut heads = Vec::new();
    for (l, layer) in attn.layers.iter().enumerate() {
        if layer.len() != attn.num_heads() {
            return Err(Error::InvalidGraph(format!("layer {l} has {} heads, expected {}", layer.len(), attn.num_heads())));
        }
        for (h, a) in layer.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::Shape {
                    op: "attention_by_distance",
                    left: a.shape(),
                    right: (n, n),
                });
            }
            let max_d = spd.max_finite();
            let mut sums = vec![0.0; max_d + 1];
            let mut counts = vec![0usize; max_d + 1];
            for u in 0..n {
                let row = a.row(u);
                for (v, w) in row.iter().enumerate() {
                    if let Some(d) = spd.get(u, v) {
                        sums[d] += w;
                        counts[d] += 1;
                    }
                }
            }
            let buckets = (0..=max_d)
                .filter(|&d| counts[d] > 0)
                .map(|d| DistanceBucket {
                    spd: d,
                    mean_attention: sums[d] / counts[d] as f64,
                    pair_count: counts[d],
                })
                .collect();
            heads.push(HeadDistances { layer: l, head: h, buckets });
        }
    }
    Ok(AttentionByDistance {
        num_layers: attn.num_layers(),
        num_heads: attn.num_heads(),
        heads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeadGlobality {
    pub layer: usize,
    pub head: usize,
    pub globality: f64,
    pub normalized_globality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerGlobality {
    pub layer: usize,
    pub globality: f64,
    pub normalized_globality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalityReport {
    pub diameter: usize,
    pub exclude_self: bool,
    pub heads: Vec<HeadGlobality>,
    pub layers: Vec<LayerGlobality>,
}

/// `Σ_d d·ᾱ(d) / Σ_d ᾱ(d)` over realized distances, and the same divided by
/// the graph diameter. `exclude_self` drops the `d = 0` bucket.
pub fn globality(abd: &AttentionByDistance, diameter: usize, exclude_self: bool) -> Result<GlobalityReport> {
    if diameter == 0 {
        return Err(Error::InsufficientData("globality needs a graph diameter of at least 1".into()));
    }
    let mut heads = Vec::with_capacity(abd.heads.len());
    for hd in &abd.heads {
        let (mut num, mut den) = (0.0, 0.0);
        for b in hd.buckets.iter().filter(|b| !(exclude_self && b.spd == 0)) {
            num += b.spd as f64 * b.mean_attention;
            den += b.mean_attention;
        }
        if den <= 0.0 {
            return Err(Error::UndefinedMetric("attention mass is zero at every realized distance"));
        }
        let g = num / den;
        heads.push(HeadGlobality {
            layer: hd.layer,
            head: hd.head,
            globality: g,
            normalized_globality: g / diameter as f64,
        });
    }
    let layers = (0..abd.num_layers)
        .map(|l| {
            let hs: Vec<&HeadGlobality> = heads.iter().filter(|h| h.layer == l).collect();
            let k = hs.len() as f64;
            LayerGlobality {
                layer: l,
                globality: hs.iter().map(|h| h.globality).sum::<f64>() / k,
                normalized_globality: hs.iter().map(|h| h.normalized_globality).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(GlobalityReport {
        diameter,
        exclude_self,
        heads,
        layers,
    })
}

/// Result of [`analyze`].
#[derive(Debug, Clone)]
pub struct Analysis {
    pub output: ForwardOutput,
    pub by_distance: AttentionByDistance,
    pub report: GlobalityReport,
}

/// Eval-mode forward pass with attention capture, then distance analysis on
/// the training adjacency of `split`.
pub fn analyze(model: &GgtVae, graph: &Graph, split: &EdgeSplit, pe: &Tensor, exclude_self: bool) -> Result<Analysis> {
    let adj = TrainAdjacency::from_edges(graph.node_count(), &split.train_pos)?;
    let spd = SpdMatrix::compute(&adj);
    let output = model.encode(graph.features(), pe, true)?;
    let attn = output.attention.as_ref().expect("capture was requested");
    let by_distance = attention_by_distance(attn, &spd)?;
    let report = globality(&by_distance, spd.max_finite(), exclude_self)?;
    Ok(Analysis {
        output,
        by_distance,
        report,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

/// `node_id,label,z_1..z_d`; missing labels are empty fields.
pub fn write_latents<W: std::io::Write>(out: W, mu: &Tensor, labels: Option<&[String]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != mu.rows() {
            return Err(Error::Shape {
                op: "export_latents",
                left: (l.len(), 1),
                right: mu.shape(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["node_id".to_string(), "label".to_string()];
    header.extend((1..=mu.cols()).map(|j| format!("z_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..mu.rows() {
        let mut rec = vec![i.to_string(), labels.map_or(String::new(), |l| l[i].clone())];
        rec.extend(mu.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_latents(path: &Path, mu: &Tensor, labels: Option<&[String]>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_latents(std::io::BufWriter::new(f), mu, labels)
}

pub const ATTENTION_CSV: &str = "attention_by_spd.csv";
pub const GLOBALITY_CSV: &str = "globality.csv";
pub const LATENTS_CSV: &str = "latents.csv";

/// Writes `attention_by_spd.csv` (`layer,head,spd,mean_attention,pair_count`)
/// and `globality.csv` (`layer,head,globality,normalized_globality`, with a
/// `layer,avg,..` row after each layer's heads) into `dir`.
pub fn export_analysis(dir: &Path, abd: &AttentionByDistance, report: &GlobalityReport) -> Result<()> {
    let mut w = csv_writer(&dir.join(ATTENTION_CSV))?;
    w.write_record(["layer", "head", "spd", "mean_attention", "pair_count"]).map_err(csv_err)?;
    for hd in &abd.heads {
        for b in &hd.buckets {
            w.write_record([
                hd.layer.to_string(),
                hd.head.to_string(),
                b.spd.to_string(),
                b.mean_attention.to_string(),
                b.pair_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(GLOBALITY_CSV))?;
    w.write_record(["layer", "head", "globality", "normalized_globality"]).map_err(csv_err)?;
    for lg in &report.layers {
        for h in report.heads.iter().filter(|h| h.layer == lg.layer) {
            w.write_record([
                h.layer.to_string(),
                h.head.to_string(),
                h.globality.to_string(),
                h.normalized_globality.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            lg.layer.to_string(),
            "avg".to_string(),
            lg.globality.to_string(),
            lg.normalized_globality.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
