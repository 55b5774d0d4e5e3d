//! TSV ingestion.
//!
//! `nodes.tsv` holds one row per node: `<id>\t<f_1>\t...\t<f_d>`, with an
//! extra trailing `\t<label>` column when the file contains a `#labels`
//! header line. Ids must cover `0..N` exactly once. `edges.tsv` holds one
//! `<u>\t<v>` row per undirected edge. Blank lines and other `#` lines are
//! ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Edge, Graph};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<Graph> {
    let nodes_text = fs::read_to_string(nodes_path)?;
    let edges_text = fs::read_to_string(edges_path)?;
    parse_graph(&nodes_text, nodes_path, &edges_text, edges_path)
}

pub(crate) fn parse_graph(nodes_text: &str, nodes_path: &Path, edges_text: &str, edges_path: &Path) -> Result<Graph> {
    let has_labels = nodes_text.lines().any(|l| l.trim() == "#labels");
    let mut rows: Vec<Option<(Vec<f64>, Option<String>)>> = Vec::new();
    let mut dim = None;
    for (idx, line) in nodes_text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = fields(line);
        let label = if has_labels {
            if f.len() < 2 {
                return Err(parse_err(nodes_path, lineno, "missing label column"));
            }
            f.pop().map(str::to_string)
        } else {
            None
        };
        let id: usize = f[0]
            .parse()
            .map_err(|_| parse_err(nodes_path, lineno, format!("bad node id `{}`", f[0])))?;
        let feats = f[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(nodes_path, lineno, format!("bad feature value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(parse_err(
                    nodes_path,
                    lineno,
                    format!("expected {d} features, found {}", feats.len()),
                ))
            }
            _ => {}
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(parse_err(nodes_path, lineno, format!("duplicate node id {id}")));
        }
        rows[id] = Some((feats, label));
    }
    let n = rows.len();
    if n == 0 {
        return Err(parse_err(nodes_path, 0, "no nodes"));
    }
    let dim = dim.unwrap_or(0);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = has_labels.then(Vec::new);
    for (id, row) in rows.into_iter().enumerate() {
        let (feats, label) = row.ok_or_else(|| parse_err(nodes_path, 0, format!("node id {id} missing; ids must be dense")))?;
        data.extend(feats);
        if let (Some(ls), Some(l)) = (labels.as_mut(), label) {
            ls.push(l);
        }
    }
    let features = Tensor::from_vec(n, dim, data)?;

    let mut edges: Vec<Edge> = Vec::new();
    for (idx, line) in edges_text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        if f.len() != 2 {
            return Err(parse_err(edges_path, lineno, format!("expected 2 columns, found {}", f.len())));
        }
        let mut ends = [0usize; 2];
        for (slot, s) in ends.iter_mut().zip(&f) {
            *slot = s
                .parse()
                .map_err(|_| parse_err(edges_path, lineno, format!("bad node id `{s}`")))?;
            if *slot >= n {
                return Err(parse_err(edges_path, lineno, format!("node id {slot} out of range (N = {n})")));
            }
        }
        if ends[0] == ends[1] {
            return Err(parse_err(edges_path, lineno, format!("self-loop on node {}", ends[0])));
        }
        edges.push((ends[0], ends[1]));
    }
    Graph::new(features, edges, labels)
}

pub fn write_nodes_tsv(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    if graph.labels().is_some() {
        out.push_str("#labels\n");
    }
    for i in 0..graph.node_count() {
        write!(out, "{i}").unwrap();
        for v in graph.features().row(i) {
            write!(out, "\t{v}").unwrap();
        }
        if let Some(l) = graph.labels() {
            write!(out, "\t{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_edges_tsv(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, v) in graph.edges() {
        writeln!(out, "{u}\t{v}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}
