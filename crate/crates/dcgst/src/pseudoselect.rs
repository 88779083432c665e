//! Pseudo-label selection: per-class confident candidates, neighborhood
//! entropy reduction scoring, and the relaxed subset optimization that picks
//! which candidates join the training set.

use ndarray::Array2;

use crate::diffcore::{row_softmax, AdamState, Tape};
use crate::error::Result;
use crate::gcnmodel::argmax_row;
use crate::graphdata::{CsrMatrix, Graph};
use crate::shiftmetrics::{cmd_weighted_node, CmdConfig};

/// Per-class top-K confident unlabeled nodes with their argmax labels.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    /// Grouped by class, each group sorted by confidence descending.
    pub nodes: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    pub confidences: Vec<f64>,
    pub k: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Per-class cap for the next stage: K grows by the expansion ratio.
pub fn next_k(k: usize, lambda: f64) -> usize {
    ((1.0 + lambda) * k as f64).ceil() as usize
}

/// For each class j, the K unlabeled nodes with the highest confidence in j
/// among nodes whose argmax is j. Ties break toward lower node index; the
/// argmax rule means a node appears at most once.
pub fn candidate_set(confidences: &Array2<f64>, unlabeled: &[usize], k: usize) -> CandidateSet {
    assert!(k >= 1);
    let class_count = confidences.ncols();
    let mut out = CandidateSet {
        k,
        ..Default::default()
    };
    for j in 0..class_count {
        let mut members: Vec<usize> = unlabeled
            .iter()
            .copied()
            .filter(|&v| argmax_row(confidences, v) == j)
            .collect();
        members.sort_by(|&a, &b| {
            confidences[[b, j]]
                .partial_cmp(&confidences[[a, j]])
                .unwrap()
                .then(a.cmp(&b))
        });
        for v in members.into_iter().take(k) {
            out.nodes.push(v);
            out.pseudo_labels.push(j);
            out.confidences.push(confidences[[v, j]]);
        }
    }
    out
}

fn entropy_nats(logits_row: &[f64]) -> f64 {
    let mut m = Array2::zeros((1, logits_row.len()));
    for (j, &v) in logits_row.iter().enumerate() {
        m[[0, j]] = v;
    }
    let p = row_softmax(&m);
    -p.iter().map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 }).sum::<f64>()
}

/// For each candidate, the total entropy reduction its pseudo-label would
/// induce on its neighbors: sum over neighbors v_n of
/// H(softmax(r_n)) - H(softmax(r_n + w * r_c)), with w the normalized
/// adjacency weight between the two nodes. Isolated candidates score 0.
pub fn ner_table(
    logits: &Array2<f64>,
    g: &Graph,
    norm_adj: &CsrMatrix,
    candidates: &[usize],
) -> Vec<f64> {
    candidates
        .iter()
        .map(|&vc| {
            let rc: Vec<f64> = logits.row(vc).to_vec();
            let mut total = 0.0;
            for &vn in g.neighbors(vc) {
                let w = norm_adj.get(vn, vc);
                if w == 0.0 {
                    continue;
                }
                let rn: Vec<f64> = logits.row(vn).to_vec();
                let shifted: Vec<f64> = rn.iter().zip(&rc).map(|(a, b)| a + w * b).collect();
                total += entropy_nats(&rn) - entropy_nats(&shifted);
            }
            total
        })
        .collect()
}

/// Optimizer settings for the relaxed subset problem.
#[derive(Debug, Clone)]
pub struct QConfig {
    pub lr: f64,
    pub steps: usize,
    /// Weight of the entropy-reduction reward.
    pub gamma: f64,
    /// Selection budget.
    pub delta: usize,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            lr: 0.01,
            steps: 300,
            gamma: 0.1,
            delta: 1,
        }
    }
}

/// Minimize, over q in [0,1]^|C|:
/// weighted-CMD(Z_U vs Z_fixed + q-weighted candidates)
/// - gamma * sum_i q_i * ner_i + relu(||q||_1 - delta).
/// First-order descent with per-step clipping; returns the final q.
pub fn optimize_q(
    z_u: &Array2<f64>,
    z_fixed: &Array2<f64>,
    z_cand: &Array2<f64>,
    ner: &[f64],
    cfg: &QConfig,
    cmd_cfg: &CmdConfig,
) -> Result<Vec<f64>> {
    assert!(cfg.delta >= 1);
    let c = z_cand.nrows();
    assert!(c >= 1);
    assert_eq!(ner.len(), c);

    let init = (cfg.delta as f64 / c as f64).min(1.0);
    let mut q = Array2::from_elem((c, 1), init);
    let ner_col = {
        let mut m = Array2::zeros((c, 1));
        for (i, &v) in ner.iter().enumerate() {
            m[[i, 0]] = v;
        }
        m
    };
    let mut adam = AdamState::new(cfg.lr, 0.0);

    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let qn = tape.leaf(q.clone(), true);
        let p = tape.constant(z_u.clone());
        let cand = tape.constant(z_cand.clone());
        let fixed = if z_fixed.nrows() > 0 {
            Some(tape.constant(z_fixed.clone()))
        } else {
            None
        };
        let cmd = cmd_weighted_node(&mut tape, p, fixed, cand, qn, cmd_cfg)?;

        let nern = tape.constant(ner_col.clone());
        let qner = tape.mul(qn, nern)?;
        let mean = tape.mean_rows(qner);
        let reward = tape.scale(mean, -(cfg.gamma) * c as f64);

        let qmean = tape.mean_rows(qn);
        let qsum = tape.scale(qmean, c as f64);
        let budget = tape.scalar_constant(cfg.delta as f64);
        let excess = tape.sub(qsum, budget)?;
        let penalty = tape.relu(excess);

        let partial = tape.add(cmd, reward)?;
        let loss = tape.add(partial, penalty)?;

        let grads = tape.backward(loss)?;
        let gq = grads.get(qn).expect("q is trainable").clone();
        adam.step(&mut [("q", &mut q, &gq)]);
        q.mapv_inplace(|v| v.clamp(0.0, 1.0));
        debug_assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    Ok(q.column(0).to_vec())
}

/// Take the delta candidates with the largest q; ties break toward higher
/// confidence, then lower node index. A budget above |C| returns all of C.
pub fn select_top(
    q: &[f64],
    candidates: &CandidateSet,
    delta: usize,
) -> Vec<(usize, usize)> {
    assert_eq!(q.len(), candidates.len());
    if delta > candidates.len() {
        eprintln!(
            "selection budget {delta} exceeds candidate count {}; taking all",
            candidates.len()
        );
    }
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| {
        q[b].partial_cmp(&q[a])
            .unwrap()
            .then(
                candidates.confidences[b]
                    .partial_cmp(&candidates.confidences[a])
                    .unwrap(),
            )
            .then(candidates.nodes[a].cmp(&candidates.nodes[b]))
    });
    idx.into_iter()
        .take(delta.min(candidates.len()))
        .map(|i| (candidates.nodes[i], candidates.pseudo_labels[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{normalized_adjacency, Graph};
    use crate::shiftmetrics::cmd_weighted;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn candidate_set_hand_example() {
        let conf = array![[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.4, 0.6]];
        let c = candidate_set(&conf, &[0, 1, 2, 3], 1);
        assert_eq!(c.nodes, vec![0, 2]);
        assert_eq!(c.pseudo_labels, vec![0, 1]);
        assert_eq!(c.confidences, vec![0.9, 0.7]);
    }

    #[test]
    fn candidate_set_saturates() {
        let conf = array![[0.6, 0.4], [0.2, 0.8], [0.7, 0.3]];
        let c = candidate_set(&conf, &[0, 1, 2], 10);
        let mut all = c.nodes.clone();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
        assert_eq!(c.len(), 3); // each node exactly once
    }

    #[test]
    fn candidate_set_respects_unlabeled_filter_and_order() {
        let conf = array![[0.9, 0.1], [0.8, 0.2], [0.85, 0.15], [0.1, 0.9]];
        let c = candidate_set(&conf, &[1, 2, 3], 2);
        // class 0 members among unlabeled: 2 (0.85) then 1 (0.8)
        assert_eq!(c.nodes, vec![2, 1, 3]);
    }

    #[test]
    fn k_expansion() {
        assert_eq!(next_k(4, 0.5), 6);
        assert_eq!(next_k(5, 0.5), 8); // ceil(7.5)
        assert_eq!(next_k(1, 0.0), 1);
    }

    #[test]
    fn ner_two_node_example() {
        // Single edge: normalized weight between the endpoints is 1/2.
        let g = Graph::new(2, &[(0, 1)], Array2::zeros((2, 1)), vec![0, 0], 1).unwrap();
        let norm = normalized_adjacency(&g).matrix;
        let logits = array![[10.0, 0.0], [0.0, 0.0]];
        let t = ner_table(&logits, &g, &norm, &[0]);
        // ln 2 - H(softmax(5, 0))
        let p = 1.0 / (1.0 + (-5.0f64).exp());
        let expected = 2f64.ln() + p * p.ln() + (1.0 - p) * (1.0 - p).ln();
        assert!((t[0] - expected).abs() < 1e-12);
        assert!((t[0] - 0.6530).abs() < 1e-3);
    }

    #[test]
    fn ner_uniform_candidate_is_zero() {
        let g = Graph::new(3, &[(0, 1), (0, 2)], Array2::zeros((3, 1)), vec![0; 3], 1).unwrap();
        let norm = normalized_adjacency(&g).matrix;
        // adding a constant vector leaves softmax unchanged
        let logits = array![[3.0, 3.0], [1.0, -1.0], [0.5, 2.0]];
        let t = ner_table(&logits, &g, &norm, &[0]);
        assert!(t[0].abs() < 1e-12);
    }

    #[test]
    fn ner_isolated_candidate_is_zero() {
        let g = Graph::new(2, &[], Array2::zeros((2, 1)), vec![0, 0], 1).unwrap();
        let norm = normalized_adjacency(&g).matrix;
        let t = ner_table(&array![[5.0, 0.0], [0.0, 0.0]], &g, &norm, &[0]);
        assert_eq!(t, vec![0.0]);
    }

    #[test]
    fn q_saturates_under_strong_reward() {
        // CMD term constant (all embeddings identical); large gamma with
        // positive ner pushes q to the all-ones corner, where the budget
        // penalty is inactive because delta = |C|.
        let z = Array2::ones((4, 2));
        let cfg = QConfig {
            gamma: 10.0,
            delta: 4,
            ..Default::default()
        };
        let cmd_cfg = CmdConfig::new(5, 0.0, 1.0);
        let q = optimize_q(&z, &z, &z, &[1.0, 1.0, 1.0, 1.0], &cfg, &cmd_cfg).unwrap();
        assert!(q.iter().all(|&v| v > 0.99), "{q:?}");
    }

    #[test]
    fn q_stationary_without_gradient() {
        // Identical embeddings, gamma = 0, initialization exactly on the
        // budget boundary: every term has zero gradient, so q stays put.
        let z = Array2::ones((4, 2));
        let cfg = QConfig {
            gamma: 0.0,
            delta: 2,
            steps: 50,
            ..Default::default()
        };
        let cmd_cfg = CmdConfig::new(5, 0.0, 1.0);
        let q = optimize_q(&z, &z, &z, &[0.0; 4], &cfg, &cmd_cfg).unwrap();
        for v in q {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn q_matches_brute_force_pair_oracle() {
        // gamma = 0, |C| = 4, delta = 2: the optimizer's top-2 should reach
        // an objective within 5% of the best of the 6 binary pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z_u = Array2::from_shape_fn((6, 2), |_| rng.gen::<f64>());
        let z_fixed = Array2::from_shape_fn((2, 2), |_| rng.gen::<f64>());
        let z_cand = Array2::from_shape_fn((4, 2), |_| rng.gen::<f64>());
        let cmd_cfg = CmdConfig::new(5, 0.0, 1.0);

        let objective = |sel: &[usize]| {
            let mut w = vec![0.0; 4];
            for &i in sel {
                w[i] = 1.0;
            }
            cmd_weighted(&z_u.view(), &z_fixed.view(), &z_cand.view(), &w, &cmd_cfg).unwrap()
        };
        let mut best = f64::INFINITY;
        for a in 0..4 {
            for b in (a + 1)..4 {
                best = best.min(objective(&[a, b]));
            }
        }

        let cfg = QConfig {
            gamma: 0.0,
            delta: 2,
            ..Default::default()
        };
        let q = optimize_q(&z_u, &z_fixed, &z_cand, &[0.0; 4], &cfg, &cmd_cfg).unwrap();
        let mut idx: Vec<usize> = (0..4).collect();
        idx.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap());
        let achieved = objective(&idx[..2]);
        assert!(
            achieved <= best * 1.05 + 1e-12,
            "achieved {achieved}, optimum {best}, q {q:?}"
        );
    }

    #[test]
    fn select_top_ordering_and_ties() {
        let cands = CandidateSet {
            nodes: vec![10, 11, 12],
            pseudo_labels: vec![0, 1, 0],
            confidences: vec![0.6, 0.9, 0.7],
            k: 3,
        };
        let sel = select_top(&[0.9, 0.1, 0.5], &cands, 2);
        assert_eq!(sel, vec![(10, 0), (12, 0)]);
        // all q equal: highest confidence wins
        let sel = select_top(&[0.5, 0.5, 0.5], &cands, 1);
        assert_eq!(sel, vec![(11, 1)]);
        // zero budget
        assert!(select_top(&[0.5, 0.5, 0.5], &cands, 0).is_empty());
        // budget above |C| returns everything
        assert_eq!(select_top(&[0.5, 0.5, 0.5], &cands, 9).len(), 3);
    }
}
