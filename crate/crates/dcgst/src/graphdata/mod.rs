//! Graph representation, derived quantities, and train/validation/test splits.

mod csr;
mod io;
mod split;
pub mod synthetic;

pub use csr::CsrMatrix;
pub use io::{load_graph, save_graph, try_load_split_override};
pub use split::{make_split, Split, SplitMode};

use ndarray::Array2;

use crate::error::{DcgstError, Result};

/// An undirected attributed graph with integer node labels.
///
/// The adjacency is symmetric, binary, and has a zero diagonal; edges are
/// stored once per direction in `adjacency` and once total in `edges`.
#[derive(Debug, Clone)]
pub struct Graph {
    pub n: usize,
    pub adjacency: CsrMatrix,
    /// Each undirected edge once, with u < v.
    pub edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Graph {
    /// Assemble a graph from an undirected edge list. Edges are symmetrized,
    /// deduplicated, and self loops dropped.
    pub fn new(
        n: usize,
        raw_edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if features.nrows() != n {
            return Err(DcgstError::Ingest(format!(
                "feature matrix has {} rows, expected {}",
                features.nrows(),
                n
            )));
        }
        if labels.len() != n {
            return Err(DcgstError::Ingest(format!(
                "label vector has {} entries, expected {}",
                labels.len(),
                n
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(DcgstError::Ingest(format!(
                    "node {i} has label {l} >= class count {class_count}"
                )));
            }
        }
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(raw_edges.len());
        for &(u, v) in raw_edges {
            if u >= n || v >= n {
                return Err(DcgstError::Ingest(format!(
                    "edge ({u}, {v}) references a node id >= {n}"
                )));
            }
            if u == v {
                continue;
            }
            edges.push((u.min(v), u.max(v)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in &edges {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        let adjacency = CsrMatrix::from_triplets(n, n, triplets);
        Ok(Graph {
            n,
            adjacency,
            edges,
            features,
            labels,
            class_count,
        })
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.get(u, v) != 0.0
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.row(v).0
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }
}

/// Symmetrically normalized adjacency D^{-1/2}(A+I)D^{-1/2}.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub matrix: CsrMatrix,
    /// Degrees of (A+I), kept for variant renormalization.
    pub degrees: Vec<f64>,
}

pub fn normalized_adjacency(g: &Graph) -> NormalizedAdjacency {
    let degrees: Vec<f64> = (0..g.n).map(|v| g.degree(v) as f64 + 1.0).collect();
    let mut triplets = Vec::with_capacity(g.adjacency.nnz() + g.n);
    for i in 0..g.n {
        triplets.push((i, i, 1.0 / degrees[i]));
        let (cols, _) = g.adjacency.row(i);
        for &j in cols {
            triplets.push((i, j, 1.0 / (degrees[i] * degrees[j]).sqrt()));
        }
    }
    NormalizedAdjacency {
        matrix: CsrMatrix::from_triplets(g.n, g.n, triplets),
        degrees,
    }
}

/// Cosine similarity of feature rows for each requested pair.
/// Zero-norm rows yield similarity 0.
pub fn feature_cosine(g: &Graph, pairs: &[(usize, usize)]) -> Vec<f64> {
    let norms: Vec<f64> = (0..g.n)
        .map(|i| g.features.row(i).dot(&g.features.row(i)).sqrt())
        .collect();
    pairs
        .iter()
        .map(|&(u, v)| {
            debug_assert!(u != v && u < g.n && v < g.n);
            let d = norms[u] * norms[v];
            if d == 0.0 {
                0.0
            } else {
                g.features.row(u).dot(&g.features.row(v)) / d
            }
        })
        .collect()
}

/// Personalized PageRank by power iteration on the lazy-free random walk
/// over (A+I): pi = teleport * e_seed + (1 - teleport) * W^T pi.
pub fn ppr_scores(g: &Graph, seed: usize, teleport: f64, iters: usize) -> Vec<f64> {
    assert!(teleport > 0.0 && teleport < 1.0 || (teleport == 1.0 && iters >= 1));
    assert!(iters >= 1);
    assert!(seed < g.n);
    let inv_deg: Vec<f64> = (0..g.n).map(|v| 1.0 / (g.degree(v) as f64 + 1.0)).collect();
    let mut pi = vec![0.0; g.n];
    pi[seed] = 1.0;
    let mut next = vec![0.0; g.n];
    for _ in 0..iters {
        next.iter_mut().for_each(|x| *x = 0.0);
        for u in 0..g.n {
            let mass = (1.0 - teleport) * pi[u] * inv_deg[u];
            next[u] += mass; // self loop from (A+I)
            for &v in g.neighbors(u) {
                next[v] += mass;
            }
        }
        next[seed] += teleport;
        std::mem::swap(&mut pi, &mut next);
    }
    pi
}
