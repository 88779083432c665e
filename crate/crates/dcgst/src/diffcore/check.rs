//! Finite-difference gradient oracle.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Compare an analytic gradient against central finite differences of
/// `loss_fn` at `param`, on at most `max_entries` randomly chosen entries.
///
/// Entries whose parameter value is within `skip_below` of zero are excluded
/// from sampling; pass a small positive value when the loss has a relu-style
/// kink at the origin. Returns `false` on the first entry whose relative
/// error exceeds `tol` (denominator `max(|analytic|, |fd|, 1)`).
pub fn finite_diff_check<F>(
    loss_fn: F,
    param: &Array2<f64>,
    analytic: &Array2<f64>,
    tol: f64,
    max_entries: usize,
    skip_below: f64,
    rng: &mut ChaCha8Rng,
) -> bool
where
    F: Fn(&Array2<f64>) -> f64,
{
    assert_eq!(param.dim(), analytic.dim());
    let mut entries: Vec<(usize, usize)> = (0..param.nrows())
        .flat_map(|i| (0..param.ncols()).map(move |j| (i, j)))
        .filter(|&(i, j)| param[[i, j]].abs() > skip_below)
        .collect();
    entries.shuffle(rng);
    entries.truncate(max_entries);

    let mut probe = param.clone();
    for (i, j) in entries {
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + FD_STEP;
        let plus = loss_fn(&probe);
        probe[[i, j]] = orig - FD_STEP;
        let minus = loss_fn(&probe);
        probe[[i, j]] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[[i, j]];
        let denom = a.abs().max(fd.abs()).max(1.0);
        if (a - fd).abs() / denom > tol {
            return false;
        }
    }
    true
}
