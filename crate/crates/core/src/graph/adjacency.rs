use std::collections::VecDeque;

use super::{canonical, Edge};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Symmetric 0/1 adjacency built from training edges only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainAdjacency {
    neighbors: Vec<Vec<usize>>,
    edge_count: usize,
}

impl TrainAdjacency {
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v || u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("bad training edge ({u}, {v})")));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let mut edge_count = 0;
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
            edge_count += nb.len();
        }
        Ok(Self {
            neighbors,
            edge_count: edge_count / 2,
        })
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, nb) in self.neighbors.iter().enumerate() {
            out.extend(nb.iter().filter(|&&v| v > u).map(|&v| canonical(u, v)));
        }
        out
    }

    pub fn dense(&self) -> Tensor {
        let n = self.node_count();
        let mut a = Tensor::zeros(n, n);
        for (u, nb) in self.neighbors.iter().enumerate() {
            for &v in nb {
                a.set(u, v, 1.0);
            }
        }
        a
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        q.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Unweighted shortest-path distances from `source`; `None` when unreachable.
pub fn bfs_spd(adj: &TrainAdjacency, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.node_count()];
    dist[source] = Some(0);
    let mut q = VecDeque::from([source]);
    while let Some(u) = q.pop_front() {
        let du = dist[u].unwrap();
        for &v in adj.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// All-pairs hop distances, one BFS per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    n: usize,
    dist: Vec<u32>,
}

impl SpdMatrix {
    const UNREACHABLE: u32 = u32::MAX;

    pub fn compute(adj: &TrainAdjacency) -> Self {
        let n = adj.node_count();
        let mut dist = Vec::with_capacity(n * n);
        for s in 0..n {
            dist.extend(
                bfs_spd(adj, s)
                    .into_iter()
                    .map(|d| d.map_or(Self::UNREACHABLE, |d| d as u32)),
            );
        }
        Self { n, dist }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<usize> {
        match self.dist[u * self.n + v] {
            Self::UNREACHABLE => None,
            d => Some(d as usize),
        }
    }

    pub fn max_finite(&self) -> usize {
        self.dist
            .iter()
            .filter(|&&d| d != Self::UNREACHABLE)
            .max()
            .copied()
            .unwrap_or(0) as usize
    }
}

/// Longest finite shortest path, taken over every connected component.
pub fn diameter(adj: &TrainAdjacency) -> Result<usize> {
    if adj.edge_count() == 0 {
        return Err(Error::InsufficientData("diameter of an edgeless graph is undefined".into()));
    }
    Ok((0..adj.node_count())
        .map(|s| bfs_spd(adj, s).into_iter().flatten().max().unwrap_or(0))
        .max()
        .unwrap_or(0))
}

/// `I − D^{-1/2} A D^{-1/2}`; isolated nodes keep `L_ii = 1`.
pub fn normalized_laplacian(adj: &TrainAdjacency) -> Tensor {
    let n = adj.node_count();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| match adj.degree(u) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut l = Tensor::identity(n);
    for u in 0..n {
        for &v in adj.neighbors(u) {
            l.set(u, v, -inv_sqrt[u] * inv_sqrt[v]);
        }
    }
    l
}
