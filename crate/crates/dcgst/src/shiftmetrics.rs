//! Central Moment Discrepancy between embedding sets.
//!
//! CMD sums the mean difference and higher-order central-moment differences
//! of two samples, each scaled by a power of the support span:
//!
//! ```text
//! cmd(P, Q) = ||E(P) - E(Q)|| / span
//!           + sum_{k=2..k_max} ||c_k(P) - c_k(Q)|| / span^k
//! ```
//!
//! Support handling: the span is a single scalar, the maximum over
//! dimensions of the empirical (or caller-provided) range, floored at 1e-8.
//! Differentiable uses treat the span as a constant.
//!
//! Two routes are provided: plain `f64` evaluation for reporting and
//! enumeration oracles, and tape builders ([`cmd_node`],
//! [`cmd_weighted_node`]) for losses that need gradients.

use ndarray::{Array2, ArrayView2, Axis};

use crate::diffcore::{NodeId, Tape};
use crate::error::{DcgstError, Result};

pub const EPS_SPAN: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct CmdConfig {
    /// Highest moment order compared (>= 1; order 1 is the mean).
    pub k_max: usize,
    pub support_lo: f64,
    pub support_hi: f64,
}

impl CmdConfig {
    pub fn new(k_max: usize, support_lo: f64, support_hi: f64) -> Self {
        assert!(k_max >= 1);
        CmdConfig {
            k_max,
            support_lo,
            support_hi,
        }
    }

    /// Scalar span, floored.
    pub fn span(&self) -> f64 {
        (self.support_hi - self.support_lo).max(EPS_SPAN)
    }

    /// Empirical support over the union of the given sample sets: per
    /// dimension min/max, collapsed to the widest dimension.
    pub fn empirical(k_max: usize, sets: &[ArrayView2<f64>]) -> Self {
        let d = sets.iter().find(|s| s.nrows() > 0).map_or(0, |s| s.ncols());
        let mut span = 0.0f64;
        for j in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in sets {
                for i in 0..s.nrows() {
                    lo = lo.min(s[[i, j]]);
                    hi = hi.max(s[[i, j]]);
                }
            }
            if hi >= lo {
                span = span.max(hi - lo);
            }
        }
        CmdConfig::new(k_max, 0.0, span)
    }
}

impl Default for CmdConfig {
    fn default() -> Self {
        CmdConfig::new(5, 0.0, 1.0)
    }
}

fn mean_rows(x: &ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    x.sum_axis(Axis(0)).insert_axis(Axis(0)).mapv(|v| v / n)
}

fn central_moment(x: &ArrayView2<f64>, mean: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut out: Array2<f64> = Array2::zeros((1, x.ncols()));
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            out[[0, j]] += (x[[i, j]] - mean[[0, j]]).powi(k as i32);
        }
    }
    out.mapv(|v| v / n)
}

fn l2(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Plain CMD between two sample sets.
pub fn cmd(p: &ArrayView2<f64>, q: &ArrayView2<f64>, cfg: &CmdConfig) -> Result<f64> {
    if p.ncols() != q.ncols() {
        return Err(DcgstError::Shape(format!(
            "cmd dimensions {} vs {}",
            p.ncols(),
            q.ncols()
        )));
    }
    assert!(p.nrows() >= 1 && q.nrows() >= 1);
    let span = cfg.span();
    let ep = mean_rows(p);
    let eq = mean_rows(q);
    let mut total = l2(&(&ep - &eq)) / span;
    for k in 2..=cfg.k_max {
        let cp = central_moment(p, &ep, k);
        let cq = central_moment(q, &eq, k);
        total += l2(&(&cp - &cq)) / span.powi(k as i32);
    }
    Ok(total)
}

/// Plain weighted CMD: the Q side pools `q_fixed` rows at weight 1 with
/// `q_cand` rows at the given weights, moments normalized by total weight.
/// Reduces to [`cmd`] on the induced subset when weights are binary.
pub fn cmd_weighted(
    p: &ArrayView2<f64>,
    q_fixed: &ArrayView2<f64>,
    q_cand: &ArrayView2<f64>,
    weights: &[f64],
    cfg: &CmdConfig,
) -> Result<f64> {
    if q_cand.nrows() != weights.len() {
        return Err(DcgstError::Shape(format!(
            "{} candidate rows, {} weights",
            q_cand.nrows(),
            weights.len()
        )));
    }
    let d = p.ncols();
    if (q_fixed.nrows() > 0 && q_fixed.ncols() != d) || (q_cand.nrows() > 0 && q_cand.ncols() != d)
    {
        return Err(DcgstError::Shape("cmd_weighted dimension mismatch".into()));
    }
    let total_w = q_fixed.nrows() as f64 + weights.iter().sum::<f64>();
    if total_w <= 0.0 {
        return Err(DcgstError::DegenerateWeight(
            "total weight on the Q side is zero".into(),
        ));
    }
    let span = cfg.span();

    let weighted_moment = |mean: Option<&Array2<f64>>, k: usize| -> Array2<f64> {
        let mut out: Array2<f64> = Array2::zeros((1, d));
        for i in 0..q_fixed.nrows() {
            for j in 0..d {
                let c = q_fixed[[i, j]] - mean.map_or(0.0, |m| m[[0, j]]);
                out[[0, j]] += c.powi(k as i32);
            }
        }
        for i in 0..q_cand.nrows() {
            for j in 0..d {
                let c = q_cand[[i, j]] - mean.map_or(0.0, |m| m[[0, j]]);
                out[[0, j]] += weights[i] * c.powi(k as i32);
            }
        }
        out.mapv(|v| v / total_w)
    };

    let ep = mean_rows(p);
    let eq = weighted_moment(None, 1);
    let mut total = l2(&(&ep - &eq)) / span;
    for k in 2..=cfg.k_max {
        let cp = central_moment(p, &ep, k);
        let cq = weighted_moment(Some(&eq), k);
        total += l2(&(&cp - &cq)) / span.powi(k as i32);
    }
    Ok(total)
}

/// Singleton-vs-set discrepancy for every row of `z_a`: higher means more
/// shifted relative to `z_b`.
pub fn node_shift_scores(
    z_a: &ArrayView2<f64>,
    z_b: &ArrayView2<f64>,
    cfg: &CmdConfig,
) -> Result<Vec<f64>> {
    (0..z_a.nrows())
        .map(|i| {
            let row = z_a.row(i).insert_axis(Axis(0));
            cmd(&row.view(), z_b, cfg)
        })
        .collect()
}

// ---- tape builders ------------------------------------------------------

/// Differentiable CMD between two tape nodes holding sample sets.
pub fn cmd_node(tape: &mut Tape, p: NodeId, q: NodeId, cfg: &CmdConfig) -> Result<NodeId> {
    if tape.shape(p).1 != tape.shape(q).1 {
        return Err(DcgstError::Shape("cmd_node dimension mismatch".into()));
    }
    let span = cfg.span();
    let ep = tape.mean_rows(p);
    let eq = tape.mean_rows(q);
    let diff = tape.sub(ep, eq)?;
    let n1 = tape.l2_norm(diff);
    let mut total = tape.scale(n1, 1.0 / span);
    for k in 2..=cfg.k_max {
        let dp = tape.sub(p, ep)?;
        let dpk = tape.pow(dp, k as f64);
        let cp = tape.mean_rows(dpk);
        let dq = tape.sub(q, eq)?;
        let dqk = tape.pow(dq, k as f64);
        let cq = tape.mean_rows(dqk);
        let dk = tape.sub(cp, cq)?;
        let nk = tape.l2_norm(dk);
        let term = tape.scale(nk, 1.0 / span.powi(k as i32));
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Differentiable weighted CMD. `weights` is a |C| x 1 column; `q_fixed`
/// rows enter at weight 1. The span stays constant (no gradient through it).
pub fn cmd_weighted_node(
    tape: &mut Tape,
    p: NodeId,
    q_fixed: Option<NodeId>,
    q_cand: NodeId,
    weights: NodeId,
    cfg: &CmdConfig,
) -> Result<NodeId> {
    let c_rows = tape.shape(q_cand).0;
    if tape.shape(weights) != (c_rows, 1) {
        return Err(DcgstError::Shape(format!(
            "weights shape {:?} for {c_rows} candidates",
            tape.shape(weights)
        )));
    }
    let fixed_rows = q_fixed.map_or(0, |f| tape.shape(f).0);
    let span = cfg.span();

    // total weight = sum(weights) + |fixed|
    let wmean = tape.mean_rows(weights);
    let wsum = tape.scale(wmean, c_rows as f64);
    let total_w = if fixed_rows > 0 {
        let f = tape.scalar_constant(fixed_rows as f64);
        tape.add(wsum, f)?
    } else {
        wsum
    };
    if tape.scalar(total_w) <= 0.0 {
        return Err(DcgstError::DegenerateWeight(
            "total weight on the Q side is zero".into(),
        ));
    }
    let inv_w = tape.pow(total_w, -1.0);

    // weighted sum of k-th powers of (rows - center), center optional
    let weighted_moment = |tape: &mut Tape, center: Option<NodeId>, k: f64| -> Result<NodeId> {
        let dc = match center {
            Some(c) => tape.sub(q_cand, c)?,
            None => q_cand,
        };
        let dck = tape.pow(dc, k);
        let wdck = tape.row_scale(dck, weights)?;
        let m = tape.mean_rows(wdck);
        let mut sum = tape.scale(m, c_rows as f64);
        if let Some(f) = q_fixed {
            let df = match center {
                Some(c) => tape.sub(f, c)?,
                None => f,
            };
            let dfk = tape.pow(df, k);
            let mf = tape.mean_rows(dfk);
            let sf = tape.scale(mf, fixed_rows as f64);
            sum = tape.add(sum, sf)?;
        }
        tape.mul(sum, inv_w)
    };

    let ep = tape.mean_rows(p);
    let eq = weighted_moment(tape, None, 1.0)?;
    let d1 = tape.sub(ep, eq)?;
    let n1 = tape.l2_norm(d1);
    let mut total = tape.scale(n1, 1.0 / span);
    for k in 2..=cfg.k_max {
        let dp = tape.sub(p, ep)?;
        let dpk = tape.pow(dp, k as f64);
        let cp = tape.mean_rows(dpk);
        let cq = weighted_moment(tape, Some(eq), k as f64)?;
        let dk = tape.sub(cp, cq)?;
        let nk = tape.l2_norm(dk);
        let term = tape.scale(nk, 1.0 / span.powi(k as i32));
        total = tape.add(total, term)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff_check;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg01(k_max: usize) -> CmdConfig {
        CmdConfig::new(k_max, 0.0, 1.0)
    }

    #[test]
    fn identical_sets_give_zero() {
        let p = array![[0.2, 0.4], [0.9, 0.1]];
        let c = CmdConfig::empirical(5, &[p.view()]);
        assert_eq!(cmd(&p.view(), &p.view(), &c).unwrap(), 0.0);
    }

    #[test]
    fn singleton_mean_gap() {
        let p = array![[0.0]];
        let q = array![[1.0]];
        let v = cmd(&p.view(), &q.view(), &cfg01(5)).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn variance_gap() {
        let p = array![[0.0], [1.0]];
        let q = array![[0.5]];
        let v = cmd(&p.view(), &q.view(), &cfg01(2)).unwrap();
        assert!((v - 0.25).abs() < 1e-9);
    }

    #[test]
    fn symmetry_nonnegativity_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>());
            let q = Array2::from_shape_fn((6, 3), |_| rng.gen::<f64>());
            let c = CmdConfig::empirical(5, &[p.view(), q.view()]);
            let a = cmd(&p.view(), &q.view(), &c).unwrap();
            let b = cmd(&q.view(), &p.view(), &c).unwrap();
            assert!(a >= 0.0);
            assert_eq!(a, b);
            assert_eq!(cmd(&p.view(), &p.view(), &c).unwrap(), 0.0);
        }
    }

    #[test]
    fn permutation_invariance() {
        let p = array![[0.1], [0.7], [0.3]];
        let p_perm = array![[0.3], [0.1], [0.7]];
        let q = array![[0.5], [0.2]];
        let c = cfg01(5);
        let a = cmd(&p.view(), &q.view(), &c).unwrap();
        let b = cmd(&p_perm.view(), &q.view(), &c).unwrap();
        // summation order differs, so exactness only up to rounding
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn weighted_binary_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c_rows = rng.gen_range(1..=8usize);
            let p = Array2::from_shape_fn((5, 3), |_| rng.gen::<f64>());
            let fixed = Array2::from_shape_fn((3, 3), |_| rng.gen::<f64>());
            let cand = Array2::from_shape_fn((c_rows, 3), |_| rng.gen::<f64>());
            let w: Vec<f64> = (0..c_rows).map(|_| f64::from(rng.gen::<bool>())).collect();
            let cfg = cfg01(5);
            let weighted =
                cmd_weighted(&p.view(), &fixed.view(), &cand.view(), &w, &cfg).unwrap();
            // explicit subset route
            let mut rows: Vec<f64> = Vec::new();
            for i in 0..3 {
                rows.extend(fixed.row(i).iter());
            }
            for (i, &wi) in w.iter().enumerate() {
                if wi == 1.0 {
                    rows.extend(cand.row(i).iter());
                }
            }
            let subset = Array2::from_shape_vec((rows.len() / 3, 3), rows).unwrap();
            let direct = cmd(&p.view(), &subset.view(), &cfg).unwrap();
            assert!(
                (weighted - direct).abs() < 1e-9,
                "weighted {weighted} vs direct {direct}"
            );
        }
    }

    #[test]
    fn weighted_all_zero_excludes_candidates() {
        let p = array![[0.3], [0.6]];
        let fixed = array![[0.5]];
        let cand = array![[0.9], [0.1], [0.2]];
        let cfg = cfg01(5);
        let v = cmd_weighted(&p.view(), &fixed.view(), &cand.view(), &[0.0; 3], &cfg).unwrap();
        let direct = cmd(&p.view(), &fixed.view(), &cfg).unwrap();
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn weighted_zero_total_weight_rejected() {
        let p = array![[0.3]];
        let fixed = Array2::zeros((0, 1));
        let cand = array![[0.9]];
        let r = cmd_weighted(&p.view(), &fixed.view(), &cand.view(), &[0.0], &cfg01(5));
        assert!(matches!(r, Err(DcgstError::DegenerateWeight(_))));
    }

    #[test]
    fn shift_scores_examples() {
        // matched moments -> 0 (z at the mean of a zero-variance set)
        let zb = array![[0.0], [0.0]];
        let za = array![[0.0], [1.0]];
        let s = node_shift_scores(&za.view(), &zb.view(), &cfg01(1)).unwrap();
        assert!(s[0].abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-9);
        // permutation equivariance
        let za2 = array![[1.0], [0.0]];
        let s2 = node_shift_scores(&za2.view(), &zb.view(), &cfg01(1)).unwrap();
        assert_eq!(s[0], s2[1]);
        assert_eq!(s[1], s2[0]);
    }

    #[test]
    fn tape_cmd_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>());
        let q = Array2::from_shape_fn((6, 3), |_| rng.gen::<f64>());
        let cfg = CmdConfig::empirical(5, &[p.view(), q.view()]);
        let plain = cmd(&p.view(), &q.view(), &cfg).unwrap();
        let mut t = Tape::new();
        let pn = t.constant(p);
        let qn = t.constant(q);
        let c = cmd_node(&mut t, pn, qn, &cfg).unwrap();
        assert!((t.scalar(c) - plain).abs() < 1e-12);
    }

    #[test]
    fn tape_weighted_matches_plain_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Array2::from_shape_fn((5, 4), |_| rng.gen::<f64>());
        let fixed = Array2::from_shape_fn((2, 4), |_| rng.gen::<f64>());
        let cand = Array2::from_shape_fn((6, 4), |_| rng.gen::<f64>());
        let w = Array2::from_shape_fn((6, 1), |_| rng.gen::<f64>());
        let cfg = cfg01(5);

        let plain = cmd_weighted(
            &p.view(),
            &fixed.view(),
            &cand.view(),
            w.as_slice().unwrap(),
            &cfg,
        )
        .unwrap();

        let build = |wv: &Array2<f64>| -> (f64, Array2<f64>) {
            let mut t = Tape::new();
            let pn = t.constant(p.clone());
            let fx = t.constant(fixed.clone());
            let cd = t.constant(cand.clone());
            let wn = t.leaf(wv.clone(), true);
            let c = cmd_weighted_node(&mut t, pn, Some(fx), cd, wn, &cfg).unwrap();
            let mut g = t.backward(c).unwrap();
            (t.scalar(c), g.take(wn, wv.dim()))
        };
        let (val, grad) = build(&w);
        assert!((val - plain).abs() < 1e-12);

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        assert!(finite_diff_check(
            |wv| build(wv).0,
            &w,
            &grad,
            1e-4,
            64,
            0.0,
            &mut rng2
        ));
    }

    #[test]
    fn weighted_one_hot_equals_explicit_selection() {
        let p = array![[0.2, 0.8], [0.6, 0.4]];
        let fixed = array![[0.5, 0.5]];
        let cand = array![[0.1, 0.9], [0.7, 0.2], [0.3, 0.3]];
        let cfg = cfg01(5);
        let v = cmd_weighted(
            &p.view(),
            &fixed.view(),
            &cand.view(),
            &[1.0, 0.0, 0.0],
            &cfg,
        )
        .unwrap();
        let subset = array![[0.5, 0.5], [0.1, 0.9]];
        let direct = cmd(&p.view(), &subset.view(), &cfg).unwrap();
        assert!((v - direct).abs() < 1e-12);
    }
}
