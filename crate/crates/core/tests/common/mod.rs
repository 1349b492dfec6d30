#![allow(dead_code)]

use ngcn::data::{Split, Task};
use ngcn::graph::{build_graph, SparseMatrix};
use ngcn::{Dataset, DenseMatrix, Rng};

/// Six nodes: a ring 0-1-2-3-4-5-0 plus the chord 1-4.
pub const SIX_EDGES: [(usize, usize); 7] = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)];

pub fn six_node_dataset() -> Dataset {
    let mut rng = Rng::new(17);
    let features = DenseMatrix::from_fn(6, 4, |i, j| {
        if (i + j) % 3 == 0 {
            0.0
        } else {
            rng.uniform_range(0.1, 1.0)
        }
    });
    let classes = [0, 1, 2, 0, 1, 2];
    let labels = DenseMatrix::from_fn(6, 3, |i, c| if classes[i] == c { 1.0 } else { 0.0 });
    let split = Split {
        train: vec![0, 1, 2],
        val: vec![3],
        test: vec![4, 5],
    };
    Dataset::new("six", Task::SingleLabel, SIX_EDGES.to_vec(), features, labels, split).unwrap()
}

/// Symmetrized graph with self-loops from an edge list.
pub fn with_self_loops(edges: &[(usize, usize)], n: usize) -> SparseMatrix {
    build_graph(edges, n, true, true).unwrap()
}

/// Erdős–Rényi edge list (`i < j`).
pub fn random_edges(n: usize, p: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    DenseMatrix::random_uniform(rows, cols, -1.0, 1.0, &mut Rng::new(seed))
}

/// Dense `diag(v)`.
pub fn diag(v: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
}
