#![allow(dead_code)]

use dcrnn::graph::WeightedDigraph;
use dcrnn::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// Directed graph with each off-diagonal edge present with probability
/// `density` and weights in `(0.1, 1)`. Some nodes may end up with no
/// out-edges.
pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> WeightedDigraph {
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                w.set(i, j, rng.random_range(0.1..1.0));
            }
        }
    }
    WeightedDigraph::from_dense(&w).unwrap()
}

/// Symmetric graph containing a ring, so every degree is positive.
pub fn random_symmetric_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> WeightedDigraph {
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            let v = rng.random_range(0.1..1.0);
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if w.get(i, j) == 0.0 && rng.random::<f64>() < density {
                let v = rng.random_range(0.1..1.0);
                w.set(i, j, v);
                w.set(j, i, v);
            }
        }
    }
    WeightedDigraph::from_dense(&w).unwrap()
}

/// Dense `p^k` by repeated multiplication.
pub fn dense_power(p: &DenseMatrix, k: usize) -> DenseMatrix {
    let mut out = DenseMatrix::identity(p.n_rows());
    for _ in 0..k {
        out = p.matmul(&out).unwrap();
    }
    out
}

/// Smallest relative error that passes `|a - n| / max(|a|, |n|, floor)`.
pub const GRAD_FLOOR: f64 = 1e-6;
