use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAX_SWEEPS: usize = 100;
pub const OFF_DIAGONAL_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenpairs of a real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigh {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: Tensor,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps rotate every off-diagonal pair to zero until the largest
/// off-diagonal magnitude falls below `OFF_DIAGONAL_TOL · max(1, ‖M‖max)`.
pub fn eigh_symmetric(m: &Tensor) -> Result<Eigh> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape {
            op: "eigh_symmetric",
            left: m.shape(),
            right: (n, n),
        });
    }
    let mut asym: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
            scale = scale.max(m.get(i, j).abs());
        }
    }
    if asym >= SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let tol = OFF_DIAGONAL_TOL * scale;

    let mut a = m.clone();
    a.requires_grad = false;
    a.grad = None;
    // Symmetrize exactly so row and column updates stay consistent.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = Tensor::identity(n);
    let off_max = |a: &Tensor| {
        let mut mx: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                mx = mx.max(a.get(i, j).abs());
            }
        }
        mx
    };

    let mut sweeps = 0;
    while off_max(&a) >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let v = &v;
    let col = |j: usize| (0..n).map(move |i| v.get(i, j));
    order.sort_by(|&x, &y| {
        a.get(x, x)
            .total_cmp(&a.get(y, y))
            .then_with(|| {
                col(x)
                    .zip(col(y))
                    .map(|(p, q)| p.total_cmp(&q))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    let values = order.iter().map(|&j| a.get(j, j)).collect();
    let vectors = Tensor::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok(Eigh {
        values,
        vectors,
        sweeps,
    })
}

/// Applies `A ← JᵀAJ`, `V ← VJ` for the plane rotation in `(p, q)`.
fn rotate(a: &mut Tensor, v: &mut Tensor, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let (akp, akq) = (a.get(k, p), a.get(k, q));
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    let data = a.data_mut();
    let (lo, hi) = data.split_at_mut(q * n);
    let row_p = &mut lo[p * n..(p + 1) * n];
    let row_q = &mut hi[..n];
    for (x, y) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let (apk, aqk) = (*x, *y);
        *x = c * apk - s * aqk;
        *y = s * apk + c * aqk;
    }
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}
