//! Synthetic graph generators used by tests, the book, and desk-scale runs
//! when no dataset export is on disk.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Graph;

/// Two-block stochastic block model with Gaussian block features.
#[derive(Debug, Clone)]
pub struct SbmConfig {
    /// Nodes per block (two blocks total).
    pub block_size: usize,
    /// Intra-block edge probability.
    pub p_in: f64,
    /// Inter-block edge probability.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise around the block mean.
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmConfig {
    /// Edge homophily implied by the block probabilities: the expected
    /// fraction of edges that stay within a block.
    pub fn homophily(&self) -> f64 {
        let b = self.block_size as f64;
        let intra = self.p_in * b * (b - 1.0); // undirected pairs, both blocks
        let inter = self.p_out * b * b;
        intra / (intra + inter)
    }

    /// Pick `p_out` so that the expected edge homophily hits `target`,
    /// holding `p_in` fixed.
    pub fn with_homophily(mut self, target: f64) -> Self {
        let b = self.block_size as f64;
        let intra = self.p_in * b * (b - 1.0);
        self.p_out = intra * (1.0 - target) / (target * b * b);
        self
    }
}

/// Generate a two-block SBM. Node labels equal block ids.
pub fn sbm_graph(cfg: &SbmConfig) -> Graph {
    let n = cfg.block_size * 2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let same = (u < cfg.block_size) == (v < cfg.block_size);
            let p = if same { cfg.p_in } else { cfg.p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let labels: Vec<usize> = (0..n).map(|v| usize::from(v >= cfg.block_size)).collect();
    let noise = Normal::new(0.0, cfg.feature_noise).unwrap();
    let mut features = Array2::zeros((n, cfg.feature_dim));
    for v in 0..n {
        // Block means +1/-1 on the first half of the dimensions.
        let sign = if labels[v] == 0 { 1.0 } else { -1.0 };
        for d in 0..cfg.feature_dim {
            let mean = if d < cfg.feature_dim / 2 { sign } else { -sign };
            features[[v, d]] = mean + noise.sample(&mut rng);
        }
    }
    Graph::new(n, &edges, features, labels, 2).expect("sbm construction is valid")
}

/// Two disjoint k-cliques with one-hot cluster features; labels are the
/// clique ids. Linearly separable by construction.
pub fn two_clique_graph(k: usize, _seed: u64) -> Graph {
    let n = 2 * k;
    let mut edges = Vec::new();
    for block in 0..2 {
        let off = block * k;
        for u in 0..k {
            for v in (u + 1)..k {
                edges.push((off + u, off + v));
            }
        }
    }
    let mut features = Array2::zeros((n, 2));
    let mut labels = vec![0usize; n];
    for v in 0..n {
        let block = v / k;
        features[[v, block]] = 1.0;
        labels[v] = block;
    }
    Graph::new(n, &edges, features, labels, 2).unwrap()
}
