//! Undirected graphs in CSR form with node features and binary labels.

mod io;
mod split;
mod synth;

pub use io::{read_edge_list, read_graph, read_node_table, write_edge_list, write_node_table};
pub use split::{split_labels, split_nodes, NodeSplit, Split, SplitRatios};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Immutable undirected graph. Adjacency is stored symmetrically, without
/// self-loops, with sorted unique neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    features: Tensor,
    labels: Vec<u8>,
}

/// Builds a graph from an undirected edge list. Self-loops and duplicate
/// edges (in either orientation) are dropped.
pub fn build_graph(edges: &[(usize, usize)], n: usize, features: Tensor, labels: Vec<u8>) -> Result<Graph> {
    if features.rows() != n {
        return Err(Error::shape(
            "build_graph",
            format!("feature matrix has {} rows for {n} nodes", features.rows()),
        ));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "build_graph",
            format!("{} labels for {n} nodes", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidConfig(format!("label {bad} is not 0 or 1")));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in edges {
        for index in [i, j] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, n });
            }
        }
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    indptr.push(0);
    for mut row in adj {
        row.sort_unstable();
        row.dedup();
        indices.extend(row);
        indptr.push(indices.len());
    }
    Ok(Graph {
        indptr,
        indices,
        features,
        labels,
    })
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|i| self.neighbors(i).iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Copy of the graph with some labels replaced.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Graph> {
        build_graph(&self.edges(), self.num_nodes(), self.features.clone(), labels)
    }

    pub fn adjacency(&self) -> SparseMatrix {
        let n = self.num_nodes();
        SparseMatrix::from_csr(
            n,
            n,
            self.indptr.clone(),
            self.indices.clone(),
            vec![1.0; self.indices.len()],
        )
        .expect("graph CSR is consistent")
    }

    /// `D^{-1/2} A D^{-1/2}` with zero rows for isolated nodes.
    fn sym_normalized_adjacency(&self, self_loops: bool) -> SparseMatrix {
        let n = self.num_nodes();
        let loop_w = if self_loops { 1.0 } else { 0.0 };
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let d = self.degree(i) as f64 + loop_w;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.indices.len() + n);
        let mut values = Vec::with_capacity(self.indices.len() + n);
        indptr.push(0);
        for i in 0..n {
            let mut diag_done = !self_loops;
            for &j in self.neighbors(i) {
                if !diag_done && j > i {
                    indices.push(i);
                    values.push(inv_sqrt[i] * inv_sqrt[i]);
                    diag_done = true;
                }
                indices.push(j);
                values.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            if !diag_done {
                indices.push(i);
                values.push(inv_sqrt[i] * inv_sqrt[i]);
            }
            indptr.push(indices.len());
        }
        SparseMatrix::from_csr(n, n, indptr, indices, values).expect("consistent")
    }

    /// GCN propagation matrix `D̃^{-1/2}(A+I)D̃^{-1/2}`.
    pub fn gcn_propagation(&self) -> SparseMatrix {
        self.sym_normalized_adjacency(true)
    }
}

/// Normalized Laplacian `I − D^{-1/2} A D^{-1/2}`.
///
/// Isolated nodes take `D^{-1/2} = 0`, so their rows equal the identity row
/// and the spectrum stays in `[0, 2]`.
pub fn normalized_laplacian(g: &Graph) -> SparseMatrix {
    let a = g.sym_normalized_adjacency(false);
    let n = g.num_nodes();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    indptr.push(0);
    for i in 0..n {
        let mut diag_done = false;
        for (j, v) in a.row_entries(i) {
            if !diag_done && j > i {
                indices.push(i);
                values.push(1.0);
                diag_done = true;
            }
            indices.push(j);
            values.push(-v);
        }
        if !diag_done {
            indices.push(i);
            values.push(1.0);
        }
        indptr.push(indices.len());
    }
    SparseMatrix::from_csr(n, n, indptr, indices, values).expect("consistent")
}
