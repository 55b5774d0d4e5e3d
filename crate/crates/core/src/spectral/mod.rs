//! Symmetric eigendecomposition and Laplacian positional encodings.

mod jacobi;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use jacobi::{eigh_symmetric, Eigh, MAX_SWEEPS, OFF_DIAGONAL_TOL};

use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian, TrainAdjacency};
use crate::numerics::Tensor;

/// Eigenvalues below this are treated as trivial (one per component).
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;
const SIGN_TOL: f64 = 1e-9;

/// Per-node Laplacian eigenvector coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    /// `N × k`; zero-padded columns when fewer than `k` nontrivial modes exist.
    pub matrix: Tensor,
    /// Eigenvalue of each non-padded column.
    pub eigenvalues: Vec<f64>,
}

impl PositionalEncoding {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn padded_columns(&self) -> usize {
        self.matrix.cols() - self.eigenvalues.len()
    }
}

/// Flips `col` so its first entry with magnitude above `1e-9` is positive.
pub fn canonicalize_sign(col: &mut [f64]) {
    if let Some(first) = col.iter().find(|v| v.abs() > SIGN_TOL) {
        if *first < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// The `k` eigenvectors of the normalized Laplacian with the smallest
/// nonzero eigenvalues, sign-canonicalized.
pub fn laplacian_pe(adj: &TrainAdjacency, k: usize) -> Result<PositionalEncoding> {
    let n = adj.node_count();
    if k >= n {
        return Err(Error::Config(format!("positional encoding dim k = {k} must be < N = {n}")));
    }
    let eig = eigh_symmetric(&normalized_laplacian(adj))?;
    let chosen: Vec<usize> = (0..n)
        .filter(|&j| eig.values[j] >= ZERO_EIGENVALUE_TOL)
        .take(k)
        .collect();
    if chosen.len() < k {
        log::warn!(
            "only {} nontrivial Laplacian eigenvectors for k = {k}; zero-padding",
            chosen.len()
        );
    }
    let mut matrix = Tensor::zeros(n, k);
    for (c, &j) in chosen.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|i| eig.vectors.get(i, j)).collect();
        canonicalize_sign(&mut col);
        for (i, v) in col.into_iter().enumerate() {
            matrix.set(i, c, v);
        }
    }
    Ok(PositionalEncoding {
        matrix,
        eigenvalues: chosen.iter().map(|&j| eig.values[j]).collect(),
    })
}

pub fn adjacency_hash(adj: &TrainAdjacency) -> String {
    let mut h = Sha256::new();
    h.update((adj.node_count() as u64).to_le_bytes());
    for (u, v) in adj.edges() {
        h.update((u as u64).to_le_bytes());
        h.update((v as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// On-disk cache of encodings, one CSV per `(adjacency hash, k)`:
/// header `node_id,p_1,..,p_k`, then `#lambda,λ_1,..` and one row per node.
#[derive(Debug, Clone)]
pub struct PeCache {
    dir: PathBuf,
}

impl PeCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, adj: &TrainAdjacency, k: usize) -> PathBuf {
        self.dir.join(format!("pe_{}_k{k}.csv", &adjacency_hash(adj)[..16]))
    }

    pub fn load_or_compute(&self, adj: &TrainAdjacency, k: usize) -> Result<PositionalEncoding> {
        let path = self.path_for(adj, k);
        if path.exists() {
            return read_pe_csv(&path, adj.node_count(), k);
        }
        let pe = laplacian_pe(adj, k)?;
        fs::create_dir_all(&self.dir)?;
        write_pe_csv(&pe, &path)?;
        Ok(pe)
    }
}

pub fn write_pe_csv(pe: &PositionalEncoding, path: &Path) -> Result<()> {
    let k = pe.dim();
    let mut out = String::from("node_id");
    for j in 1..=k {
        write!(out, ",p_{j}").unwrap();
    }
    out.push_str("\n#lambda");
    for v in &pe.eigenvalues {
        write!(out, ",{v}").unwrap();
    }
    out.push('\n');
    for i in 0..pe.matrix.rows() {
        write!(out, "{i}").unwrap();
        for v in pe.matrix.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pe_csv(path: &Path, n: usize, k: usize) -> Result<PositionalEncoding> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let header = lines.next().ok_or_else(|| err(1, "empty file"))?.1;
    if header.split(',').count() != k + 1 {
        return Err(err(1, "column count does not match k"));
    }
    let parse = |line: usize, s: &str| s.parse::<f64>().map_err(|_| err(line, "bad number"));
    let (li, lambda) = lines.next().ok_or_else(|| err(2, "missing #lambda row"))?;
    let eigenvalues = lambda
        .strip_prefix("#lambda")
        .ok_or_else(|| err(li + 1, "missing #lambda row"))?
        .split(',')
        .skip(1)
        .map(|s| parse(li + 1, s))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(n * k);
    let mut rows = 0;
    for (li, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 1 || fields[0].parse::<usize>().ok() != Some(rows) {
            return Err(err(li + 1, "malformed row"));
        }
        for f in &fields[1..] {
            data.push(parse(li + 1, f)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(err(0, "row count does not match node count"));
    }
    Ok(PositionalEncoding {
        matrix: Tensor::from_vec(n, k, data)?,
        eigenvalues,
    })
}
