//! Two-layer graph convolutional classifier (teacher, student, and edge
//! predictor encoder all share this architecture).
//!
//! `logits = A_hat . (dropout(relu(A_hat . (dropout(X) . W1))) . W2)` with no
//! bias terms. The final-layer output doubles as the embedding Z used by the
//! discrepancy metrics; softmax is applied for confidences only.

use std::fs;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{NodeId, Tape};
use crate::error::{DcgstError, Result};
use crate::graphdata::CsrMatrix;

#[derive(Debug, Clone)]
pub struct GcnParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub dropout_rate: f64,
}

/// Glorot-uniform initialization, bound sqrt(6 / (fan_in + fan_out)).
pub fn init_params(d_in: usize, hidden: usize, out: usize, seed: u64) -> GcnParams {
    assert!(d_in >= 1 && hidden >= 1 && out >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glorot = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
    };
    GcnParams {
        w1: glorot(&mut rng, d_in, hidden),
        w2: glorot(&mut rng, hidden, out),
        dropout_rate: 0.5,
    }
}

/// Adjacency operand for a forward pass: either a fixed normalized matrix or
/// an edited variant whose candidate-pair entries live on the tape.
#[derive(Clone)]
pub enum GraphInput {
    Fixed(Rc<CsrMatrix>),
    Edited {
        /// Normalized variant with the candidate-pair entries zeroed.
        base: Rc<CsrMatrix>,
        pairs: Rc<Vec<(usize, usize)>>,
        /// Per-pair normalization coefficients 1/sqrt(d_i d_j), constant.
        coeffs: Rc<Vec<f64>>,
        /// e x 1 column of edge values (hard samples in production).
        edge_vals: NodeId,
    },
}

impl GraphInput {
    fn apply(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        match self {
            GraphInput::Fixed(m) => tape.spmm(Rc::clone(m), h),
            GraphInput::Edited {
                base,
                pairs,
                coeffs,
                edge_vals,
            } => tape.spmm_edited(
                Rc::clone(base),
                Rc::clone(pairs),
                Rc::clone(coeffs),
                *edge_vals,
                h,
            ),
        }
    }
}

/// Tape handles produced by [`forward`].
pub struct ForwardNodes {
    pub w1: NodeId,
    pub w2: NodeId,
    /// First-layer activations (n x hidden).
    pub hidden: NodeId,
    /// Final-layer output, also the embedding Z (n x out).
    pub logits: NodeId,
}

/// Run the two-layer GCN on the tape. `train_mode` enables dropout (with
/// the explicit rng); eval passes take rate 0. `trainable` flags the weight
/// leaves for gradient collection.
pub fn forward(
    tape: &mut Tape,
    params: &GcnParams,
    adj: &GraphInput,
    x: NodeId,
    train_mode: bool,
    trainable: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardNodes> {
    let w1 = tape.leaf(params.w1.clone(), trainable);
    let w2 = tape.leaf(params.w2.clone(), trainable);
    let rate = if train_mode { params.dropout_rate } else { 0.0 };

    let xd = tape.dropout(x, rate, rng);
    let xw = tape.matmul(xd, w1)?;
    let pre = adj.apply(tape, xw)?;
    let hidden = tape.relu(pre);

    let hd = tape.dropout(hidden, rate, rng);
    let hw = tape.matmul(hd, w2)?;
    let logits = adj.apply(tape, hw)?;

    Ok(ForwardNodes {
        w1,
        w2,
        hidden,
        logits,
    })
}

/// Plain evaluation forward: embeddings, logits, and row-softmax
/// confidences, dropout off.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Final-layer embeddings Z (identical to logits under this variant).
    pub z: Array2<f64>,
    pub logits: Array2<f64>,
    pub confidences: Array2<f64>,
}

pub fn forward_eval(params: &GcnParams, adj: &CsrMatrix, x: &Array2<f64>) -> ForwardResult {
    let h1 = adj.dot(&x.dot(&params.w1)).mapv(|v| v.max(0.0));
    let logits = adj.dot(&h1.dot(&params.w2));
    let confidences = crate::diffcore::row_softmax(&logits);
    ForwardResult {
        z: logits.clone(),
        logits,
        confidences,
    }
}

/// Mean cross-entropy over `node_set`, as a tape node.
pub fn ce_loss(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    node_set: &[usize],
) -> Result<NodeId> {
    if node_set.is_empty() {
        return Err(DcgstError::EmptyMask("ce_loss over empty node set".into()));
    }
    tape.masked_cross_entropy(logits, Rc::new(labels.to_vec()), Rc::new(node_set.to_vec()))
}

/// Argmax with ties broken by the lowest class index.
pub fn argmax_row(logits: &Array2<f64>, row: usize) -> usize {
    let mut best = 0;
    for j in 1..logits.ncols() {
        if logits[[row, j]] > logits[[row, best]] {
            best = j;
        }
    }
    best
}

pub fn accuracy(logits: &Array2<f64>, labels: &[usize], node_set: &[usize]) -> Result<f64> {
    if node_set.is_empty() {
        return Err(DcgstError::EmptyMask("accuracy over empty node set".into()));
    }
    let correct = node_set
        .iter()
        .filter(|&&v| argmax_row(logits, v) == labels[v])
        .count();
    Ok(correct as f64 / node_set.len() as f64)
}

// ---- checkpoint format ---------------------------------------------------
//
// Text layout:
//   gcn-checkpoint v1
//   w1 <rows> <cols>
//   <one row per line, space-separated decimals>
//   w2 <rows> <cols>
//   ...
//   dropout <rate>

pub fn save_checkpoint(params: &GcnParams, path: &Path) -> Result<()> {
    let mut out = String::from("gcn-checkpoint v1\n");
    for (name, m) in [("w1", &params.w1), ("w2", &params.w2)] {
        out.push_str(&format!("{name} {} {}\n", m.nrows(), m.ncols()));
        for i in 0..m.nrows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out.push_str(&format!("dropout {}\n", params.dropout_rate));
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GcnParams> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "gcn-checkpoint v1" {
        return Err(DcgstError::Ingest(format!("bad checkpoint header: {header}")));
    }
    let read_matrix = |expect: &str, lines: &mut std::str::Lines| -> Result<Array2<f64>> {
        let hdr = lines
            .next()
            .ok_or_else(|| DcgstError::Ingest("truncated checkpoint".into()))?;
        let mut parts = hdr.split_whitespace();
        let name = parts.next().unwrap_or_default();
        if name != expect {
            return Err(DcgstError::Ingest(format!("expected {expect}, got {name}")));
        }
        let rows: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| {
            DcgstError::Ingest("bad matrix header".into())
        })?;
        let cols: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| {
            DcgstError::Ingest("bad matrix header".into())
        })?;
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| DcgstError::Ingest("truncated checkpoint".into()))?;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= cols {
                    return Err(DcgstError::Ingest("row too long".into()));
                }
                m[[i, j]] = tok
                    .parse()
                    .map_err(|e| DcgstError::Ingest(format!("bad value: {e}")))?;
            }
        }
        Ok(m)
    };
    let w1 = read_matrix("w1", &mut lines)?;
    let w2 = read_matrix("w2", &mut lines)?;
    let drop_line = lines
        .next()
        .ok_or_else(|| DcgstError::Ingest("missing dropout line".into()))?;
    let dropout_rate: f64 = drop_line
        .strip_prefix("dropout ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DcgstError::Ingest("bad dropout line".into()))?;
    Ok(GcnParams {
        w1,
        w2,
        dropout_rate,
    })
}
