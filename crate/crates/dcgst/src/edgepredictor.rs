//! Edge predictor: learns per-pair edge probabilities with a small GCN
//! encoder, samples binary graph variants through a relaxed-Bernoulli
//! (Gumbel) reparameterization, and exposes the reconstruction +
//! discrepancy loss.
//!
//! Edits are restricted to a candidate set: a handful of distribution-shifted
//! nodes (their incident edges become removable and a few high-similarity
//! absent pairs become addable) plus a global pair budget picked by feature
//! cosine. This keeps the work near O(m·n + e) instead of n².

use std::collections::HashSet;
use std::rc::Rc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{NodeId, Tape};
use crate::error::{DcgstError, Result};
use crate::gcnmodel::{forward, ForwardNodes, GcnParams, GraphInput};
use crate::graphdata::{feature_cosine, CsrMatrix, Graph, NormalizedAdjacency};
use crate::shiftmetrics::{cmd_node, node_shift_scores, CmdConfig};

/// Probabilities are clamped to this band before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Candidate edit set: `node_set` rows may be rewired, `pair_set` is a
/// global budget of addable absent pairs and removable existing edges.
#[derive(Debug, Clone, Default)]
pub struct EditCandidates {
    pub node_set: Vec<usize>,
    /// Pairs with u < v; mixes existing edges and absent pairs.
    pub pair_set: Vec<(usize, usize)>,
}

/// Source of Gumbel(0,1) noise; the frozen variant is a test hook.
pub trait GumbelSource {
    fn sample(&mut self, n: usize) -> Array2<f64>;
}

pub struct RngGumbel<'a>(pub &'a mut ChaCha8Rng);

impl GumbelSource for RngGumbel<'_> {
    fn sample(&mut self, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 1), |_| {
            let u: f64 = self.0.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
    }
}

/// Emits the same constant for every draw.
pub struct FrozenGumbel(pub f64);

impl GumbelSource for FrozenGumbel {
    fn sample(&mut self, n: usize) -> Array2<f64> {
        Array2::from_elem((n, 1), self.0)
    }
}

fn ordered(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Pick the edit-candidate set: the `m/2` most shifted test nodes plus the
/// `m/2` most shifted labeled nodes (by singleton discrepancy against the
/// other side), and a pair budget of the `e/2` most similar absent pairs
/// (from a 20·e random sample) plus the `e/2` least similar existing edges.
pub fn select_edit_candidates(
    g: &Graph,
    z: &ArrayView2<f64>,
    train_nodes: &[usize],
    test_nodes: &[usize],
    m: usize,
    e: usize,
    cfg: &CmdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EditCandidates> {
    let gather = |nodes: &[usize]| {
        let mut out = Array2::zeros((nodes.len(), z.ncols()));
        for (r, &v) in nodes.iter().enumerate() {
            out.row_mut(r).assign(&z.row(v));
        }
        out
    };
    let z_train = gather(train_nodes);
    let z_test = gather(test_nodes);

    let mut node_set = Vec::new();
    if m >= 2 && !train_nodes.is_empty() && !test_nodes.is_empty() {
        let half = m / 2;
        let rank = |nodes: &[usize], own: &Array2<f64>, other: &Array2<f64>| -> Result<Vec<usize>> {
            let scores = node_shift_scores(&own.view(), &other.view(), cfg)?;
            let mut idx: Vec<usize> = (0..nodes.len()).collect();
            idx.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then(nodes[a].cmp(&nodes[b]))
            });
            Ok(idx.into_iter().take(half).map(|i| nodes[i]).collect())
        };
        node_set.extend(rank(test_nodes, &z_test, &z_train)?);
        node_set.extend(rank(train_nodes, &z_train, &z_test)?);
        node_set.sort_unstable();
        node_set.dedup();
    }

    let mut pair_set = Vec::new();
    if e > 0 {
        // Addable half: random absent pairs, ranked by feature cosine.
        let absent = sample_absent_pairs(g, 20 * e, rng);
        let sims = feature_cosine(g, &absent);
        let mut idx: Vec<usize> = (0..absent.len()).collect();
        idx.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(absent[a].cmp(&absent[b])));
        pair_set.extend(idx.into_iter().take(e / 2).map(|i| absent[i]));

        // Removable half: existing edges with the lowest cosine.
        let edge_sims = feature_cosine(g, &g.edges);
        let mut eidx: Vec<usize> = (0..g.edges.len()).collect();
        eidx.sort_by(|&a, &b| {
            edge_sims[a]
                .partial_cmp(&edge_sims[b])
                .unwrap()
                .then(g.edges[a].cmp(&g.edges[b]))
        });
        pair_set.extend(eidx.into_iter().take(e / 2).map(|i| g.edges[i]));
        pair_set.sort_unstable();
        pair_set.dedup();
    }
    Ok(EditCandidates { node_set, pair_set })
}

/// Uniformly sample up to `count` distinct absent pairs (u < v, no edge).
fn sample_absent_pairs(g: &Graph, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    if g.n < 2 {
        return out;
    }
    let max_absent = g.n * (g.n - 1) / 2 - g.edges.len();
    let target = count.min(max_absent);
    let mut attempts = 0usize;
    while out.len() < target && attempts < 200 * count + 100 {
        attempts += 1;
        let u = rng.gen_range(0..g.n);
        let v = rng.gen_range(0..g.n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        let p = ordered(u, v);
        if seen.insert(p) {
            out.push(p);
        }
    }
    out
}

/// Concrete pairs whose entries get sampled in a variant: the global
/// pair budget, every edge incident to a candidate node (removable), and a
/// few high-cosine absent partners per candidate node (addable).
pub fn edit_pairs(
    g: &Graph,
    cands: &EditCandidates,
    adds_per_node: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut pairs: HashSet<(usize, usize)> = cands.pair_set.iter().copied().collect();
    for &v in &cands.node_set {
        for &u in g.neighbors(v) {
            pairs.insert(ordered(u, v));
        }
        if adds_per_node > 0 && g.n > 1 {
            let mut pool = Vec::new();
            let mut tried = HashSet::new();
            let mut attempts = 0;
            while pool.len() < 5 * adds_per_node && attempts < 100 * adds_per_node {
                attempts += 1;
                let u = rng.gen_range(0..g.n);
                if u == v || g.has_edge(u, v) || !tried.insert(u) {
                    continue;
                }
                pool.push(ordered(u, v));
            }
            let sims = feature_cosine(g, &pool);
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(pool[a].cmp(&pool[b])));
            for i in idx.into_iter().take(adds_per_node) {
                pairs.insert(pool[i]);
            }
        }
    }
    let mut out: Vec<(usize, usize)> = pairs.into_iter().collect();
    out.sort_unstable();
    out
}

/// Edge-probability outputs for a fixed pair list.
pub struct EpForward {
    pub encoder: ForwardNodes,
    /// e x 1 column of probabilities in (0, 1).
    pub probs: NodeId,
}

/// Per-pair probabilities sigmoid(T_i · T_j) from an embedding node.
pub fn pair_probs(tape: &mut Tape, t: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
    let (_, d) = tape.shape(t);
    let is: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let js: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let ti = tape.gather_rows(t, Rc::new(is))?;
    let tj = tape.gather_rows(t, Rc::new(js))?;
    let prod = tape.mul(ti, tj)?;
    let ones = tape.constant(Array2::ones((d, 1)));
    let dots = tape.matmul(prod, ones)?;
    Ok(tape.sigmoid(dots))
}

/// Run the encoder GCN on the original normalized adjacency and score pairs.
#[allow(clippy::too_many_arguments)]
pub fn ep_forward(
    tape: &mut Tape,
    ep: &GcnParams,
    adj: Rc<CsrMatrix>,
    x: NodeId,
    pairs: &[(usize, usize)],
    train_mode: bool,
    trainable: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EpForward> {
    let encoder = forward(tape, ep, &GraphInput::Fixed(adj), x, train_mode, trainable, rng)?;
    let probs = pair_probs(tape, encoder.logits, pairs)?;
    Ok(EpForward { encoder, probs })
}

/// A sampled graph variant, kept on the tape for gradient routing.
///
/// `base` is the normalized adjacency with the edit-pair entries zeroed;
/// `hard` holds the rounded samples (straight-through backward), `relaxed`
/// the pre-rounding sigmoid values. Off-candidate entries match the
/// original operator exactly.
pub struct VariantAdjacency {
    pub base: Rc<CsrMatrix>,
    pub pairs: Rc<Vec<(usize, usize)>>,
    /// 1/sqrt(d_i d_j) per pair, from the original (A+I) degrees.
    pub coeffs: Rc<Vec<f64>>,
    pub hard: NodeId,
    pub relaxed: NodeId,
}

impl VariantAdjacency {
    pub fn graph_input(&self) -> GraphInput {
        GraphInput::Edited {
            base: Rc::clone(&self.base),
            pairs: Rc::clone(&self.pairs),
            coeffs: Rc::clone(&self.coeffs),
            edge_vals: self.hard,
        }
    }

    /// Hard 0/1 value for each pair.
    pub fn hard_values(&self, tape: &Tape) -> Vec<f64> {
        tape.value(self.hard).column(0).to_vec()
    }
}

/// How the pre-sigmoid argument of a relaxed-Bernoulli sample is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseForm {
    /// s = sigmoid((ln M + G) / τ), one Gumbel variate per pair. Biased
    /// toward 0 (an edge with probability M survives with 1 - e^{-M}).
    #[default]
    SingleGumbel,
    /// s = sigmoid((logit M + L) / τ) with logistic noise L = G1 - G2;
    /// the hard sample is 1 with probability exactly M.
    Logistic,
}

/// Sample one variant with the default single-Gumbel form: per pair,
/// s = sigmoid((ln M + G) / τ), hard value floor(s + 1/2), gradients routed
/// straight through the rounding.
pub fn sample_variant(
    tape: &mut Tape,
    norm: &NormalizedAdjacency,
    pairs: Vec<(usize, usize)>,
    probs: NodeId,
    tau: f64,
    gumbel: &mut dyn GumbelSource,
) -> Result<VariantAdjacency> {
    sample_variant_with(tape, norm, pairs, probs, tau, gumbel, NoiseForm::SingleGumbel)
}

/// [`sample_variant`] with an explicit noise form. Under
/// [`NoiseForm::Logistic`] the noise is the difference of two draws from the
/// source (a frozen source therefore yields zero noise).
pub fn sample_variant_with(
    tape: &mut Tape,
    norm: &NormalizedAdjacency,
    pairs: Vec<(usize, usize)>,
    probs: NodeId,
    tau: f64,
    gumbel: &mut dyn GumbelSource,
    form: NoiseForm,
) -> Result<VariantAdjacency> {
    assert!(tau > 0.0);
    if tape.shape(probs) != (pairs.len(), 1) {
        return Err(DcgstError::Shape(format!(
            "{} pairs but probability column is {:?}",
            pairs.len(),
            tape.shape(probs)
        )));
    }
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (arg, noise_val) = match form {
        NoiseForm::SingleGumbel => {
            let logp = tape.ln_clamped(clamped, PROB_CLAMP / 2.0);
            (logp, gumbel.sample(pairs.len()))
        }
        NoiseForm::Logistic => {
            let logp = tape.ln_clamped(clamped, PROB_CLAMP / 2.0);
            let negm = tape.scale(clamped, -1.0);
            let one = tape.scalar_constant(1.0);
            let q = tape.add(negm, one)?;
            let logq = tape.ln_clamped(q, PROB_CLAMP / 2.0);
            let logit = tape.sub(logp, logq)?;
            (logit, gumbel.sample(pairs.len()) - gumbel.sample(pairs.len()))
        }
    };
    let noise = tape.constant(noise_val);
    let shifted = tape.add(arg, noise)?;
    let scaled = tape.scale(shifted, 1.0 / tau);
    let relaxed = tape.sigmoid(scaled);
    let hard = tape.straight_through(relaxed);

    let edit: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let n = norm.matrix.n_rows;
    let mut triplets = Vec::with_capacity(norm.matrix.nnz());
    for i in 0..n {
        let (cols, vals) = norm.matrix.row(i);
        for (idx, &j) in cols.iter().enumerate() {
            if i != j && edit.contains(&ordered(i, j)) {
                continue;
            }
            triplets.push((i, j, vals[idx]));
        }
    }
    let base = Rc::new(CsrMatrix::from_triplets(n, n, triplets));
    let coeffs: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| 1.0 / (norm.degrees[i] * norm.degrees[j]).sqrt())
        .collect();
    Ok(VariantAdjacency {
        base,
        pairs: Rc::new(pairs),
        coeffs: Rc::new(coeffs),
        hard,
        relaxed,
    })
}

/// Apply hard 0/1 pair values to a graph, returning the edited graph.
/// Useful for checking what a sampled variant looks like as plain data.
pub fn apply_edits(g: &Graph, pairs: &[(usize, usize)], vals: &[f64]) -> Result<Graph> {
    assert_eq!(pairs.len(), vals.len());
    let drop: HashSet<(usize, usize)> = pairs
        .iter()
        .zip(vals)
        .filter(|&(_, &v)| v < 0.5)
        .map(|(&p, _)| p)
        .collect();
    let mut edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .copied()
        .filter(|p| !drop.contains(p))
        .collect();
    for (&p, &v) in pairs.iter().zip(vals) {
        if v >= 0.5 {
            edges.push(p);
        }
    }
    Graph::new(g.n, &edges, g.features.clone(), g.labels.clone(), g.class_count)
}

/// Balanced reconstruction pair list: the edit pairs plus uniformly sampled
/// extra pairs so that existing and absent pairs are equal in count (±1).
pub fn bce_pairs(
    g: &Graph,
    pairs: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut pos: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(u, v)| g.has_edge(u, v)).collect();
    let mut neg: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(u, v)| !g.has_edge(u, v)).collect();
    let have: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    if pos.len() > neg.len() {
        let extra = sample_absent_pairs(g, 20 * (pos.len() - neg.len()), rng);
        for p in extra {
            if neg.len() >= pos.len() {
                break;
            }
            if !have.contains(&p) {
                neg.push(p);
            }
        }
    } else if neg.len() > pos.len() && !g.edges.is_empty() {
        let mut budget = neg.len() - pos.len();
        let mut attempts = 0;
        while budget > 0 && attempts < 200 * neg.len() + 100 {
            attempts += 1;
            let p = g.edges[rng.gen_range(0..g.edges.len())];
            if !have.contains(&p) && !pos.contains(&p) {
                pos.push(p);
                budget -= 1;
            }
        }
    }
    pos.extend(neg);
    pos
}

/// Column of reconstruction targets A[i,j] for a pair list.
pub fn bce_targets(g: &Graph, pairs: &[(usize, usize)]) -> Array2<f64> {
    Array2::from_shape_fn((pairs.len(), 1), |(p, _)| {
        if g.has_edge(pairs[p].0, pairs[p].1) {
            1.0
        } else {
            0.0
        }
    })
}

/// Edge-predictor loss: mean BCE over the reconstruction pairs plus
/// `alpha` times the discrepancy between the two embedding sets.
pub fn ep_loss(
    tape: &mut Tape,
    probs: NodeId,
    targets: Rc<Array2<f64>>,
    z_u: NodeId,
    z_ca: NodeId,
    alpha: f64,
    cfg: &CmdConfig,
) -> Result<NodeId> {
    if tape.shape(probs).0 == 0 {
        return Err(DcgstError::EmptyMask("ep_loss over empty pair set".into()));
    }
    let bce = tape.bce_mean(probs, targets)?;
    if alpha == 0.0 {
        return Ok(bce);
    }
    let d = cmd_node(tape, z_u, z_ca, cfg)?;
    let weighted = tape.scale(d, alpha);
    tape.add(bce, weighted)
}
