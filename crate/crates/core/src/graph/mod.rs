//! Graph datasets, the held-out edge protocol and shortest-path machinery.

mod adjacency;
mod io;
mod split;
pub mod synthetic;

use std::collections::HashSet;

use sha2::{Digest, Sha256};

pub use adjacency::{bfs_spd, diameter, normalized_laplacian, SpdMatrix, TrainAdjacency};
pub use io::{load_graph, write_edges_tsv, write_nodes_tsv};
pub use split::{sample_negatives, split_edges, EdgeSplit, SplitConfig};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Undirected edge stored as `(u, v)` with `u < v`.
pub type Edge = (usize, usize);

#[inline]
pub fn canonical(u: usize, v: usize) -> Edge {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Undirected, unweighted graph with dense node features.
#[derive(Debug, Clone)]
pub struct Graph {
    features: Tensor,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    labels: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph, canonicalizing and deduplicating edges.
    pub fn new(features: Tensor, edges: impl IntoIterator<Item = Edge>, labels: Option<Vec<String>>) -> Result<Self> {
        let n = features.rows();
        let mut edge_set = HashSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            edge_set.insert(canonical(u, v));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InvalidGraph(format!("{} labels for {n} nodes", l.len())));
            }
        }
        let mut edges: Vec<Edge> = edge_set.iter().copied().collect();
        edges.sort_unstable();
        Ok(Self {
            features,
            edges,
            edge_set,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Sorted, canonical edge list.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_set.contains(&canonical(u, v))
    }

    pub fn non_edge_count(&self) -> usize {
        let n = self.node_count();
        n * n.saturating_sub(1) / 2 - self.edges.len()
    }

    /// Content hash over node count, features and edges.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.node_count() as u64).to_le_bytes());
        h.update((self.feature_dim() as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
