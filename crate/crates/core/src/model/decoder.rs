use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::numerics::{sigmoid, Tensor};

pub(crate) fn check_pairs(n: usize, pairs: &[Edge]) -> Result<()> {
    for &(u, v) in pairs {
        if u == v {
            return Err(Error::InvalidGraph(format!("self-loop pair ({u}, {v}) cannot be decoded")));
        }
        if u >= n || v >= n {
            return Err(Error::InvalidGraph(format!("pair ({u}, {v}) out of range for {n} nodes")));
        }
    }
    Ok(())
}

/// Edge probabilities `σ(z_u · z_v)`.
pub fn decode_pairs(z: &Tensor, pairs: &[Edge]) -> Result<Vec<f64>> {
    check_pairs(z.rows(), pairs)?;
    Ok(pairs
        .iter()
        .map(|&(u, v)| sigmoid(z.row(u).iter().zip(z.row(v)).map(|(a, b)| a * b).sum()))
        .collect())
}

/// `σ(Z Zᵀ)` with the diagonal masked to zero.
pub fn decode_full(z: &Tensor) -> Tensor {
    let n = z.rows();
    let mut out = Tensor::zeros(n, n);
    for u in 0..n {
        for v in u + 1..n {
            let p = sigmoid(z.row(u).iter().zip(z.row(v)).map(|(a, b)| a * b).sum());
            out.set(u, v, p);
            out.set(v, u, p);
        }
    }
    out
}
