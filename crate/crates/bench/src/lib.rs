//! Deterministic inputs shared by the kernel benchmarks.

use dcrnn::{DenseMatrix, WeightedDigraph};

/// Directed ring of `n` nodes with a chord from every node to the one
/// `stride` ahead, mimicking the sparsity of a road sensor graph.
pub fn road_like_graph(n: usize, stride: usize) -> WeightedDigraph {
    let mut triplets = Vec::with_capacity(3 * n);
    for i in 0..n {
        triplets.push((i, (i + 1) % n, 0.9));
        triplets.push(((i + 1) % n, i, 0.6));
        if n > 2 * stride {
            triplets.push((i, (i + stride) % n, 0.3));
        }
    }
    let w = dcrnn::SparseMatrix::from_triplets(n, n, triplets).expect("valid triplets");
    let ids = (0..n).map(|i| format!("n{i}")).collect();
    WeightedDigraph::from_weights(ids, w).expect("square weights")
}

/// Smooth `rows × cols` signal in `[-1, 1]`.
pub fn signal(rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("length matches shape")
}
