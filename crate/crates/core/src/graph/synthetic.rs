//! Small generated graphs for tests, probes and the demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Edge, Graph};
use crate::numerics::Tensor;

fn unit_features(n: usize) -> Tensor {
    Tensor::filled(n, 1, 1.0)
}

pub fn path(n: usize) -> Graph {
    Graph::new(unit_features(n), (1..n).map(|v| (v - 1, v)), None).unwrap()
}

pub fn cycle(n: usize) -> Graph {
    let mut edges: Vec<Edge> = (1..n).map(|v| (v - 1, v)).collect();
    if n > 2 {
        edges.push((0, n - 1));
    }
    Graph::new(unit_features(n), edges, None).unwrap()
}

pub fn complete(n: usize) -> Graph {
    let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
    Graph::new(unit_features(n), edges, None).unwrap()
}

/// Node 0 joined to `leaves` leaf nodes.
pub fn star(leaves: usize) -> Graph {
    Graph::new(unit_features(leaves + 1), (1..=leaves).map(|v| (0, v)), None).unwrap()
}

/// `rows × cols` lattice.
pub fn grid(rows: usize, cols: usize) -> Graph {
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    Graph::new(unit_features(rows * cols), edges, None).unwrap()
}

pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(unit_features(n), edges, None).unwrap()
}

/// Node features for generated graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeFeatures {
    /// One-hot node ids (`N×N` identity).
    Identity,
    /// Independent standard-normal features of the given width.
    Gaussian(usize),
}

/// Stochastic block model with the block index as label. Edges are drawn
/// before features, so the edge set depends only on the seed.
pub fn sbm(block_sizes: &[usize], p_in: f64, p_out: f64, features: NodeFeatures, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = block.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block[u] == block[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let features = match features {
        NodeFeatures::Identity => Tensor::identity(n),
        NodeFeatures::Gaussian(d) => Tensor::from_fn(n, d, |_, _| rng.sample(StandardNormal)),
    };
    let labels = block.iter().map(|b| b.to_string()).collect();
    Graph::new(features, edges, Some(labels)).unwrap()
}
