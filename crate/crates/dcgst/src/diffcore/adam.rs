//! Adam with the L2 term folded into the gradient.

use std::collections::HashMap;

use ndarray::Array2;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators keyed by a stable name.
pub struct AdamState {
    pub lr: f64,
    pub l2: f64,
    step: u64,
    moments: HashMap<String, (Array2<f64>, Array2<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64, l2: f64) -> Self {
        AdamState {
            lr,
            l2,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over all listed parameters. The step counter
    /// advances once per call; gradients receive `l2 * param` before the
    /// moment updates.
    pub fn step(&mut self, updates: &mut [(&str, &mut Array2<f64>, &Array2<f64>)]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (name, param, grad) in updates.iter_mut() {
            debug_assert_eq!(param.dim(), grad.dim());
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(param.dim()), Array2::zeros(param.dim())));
            for ((p, &g0), (mi, vi)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g0 + self.l2 * *p;
                *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut opt = AdamState::new(0.01, 0.0);
        let mut p = array![[1.0, -2.0]];
        let g = Array2::zeros((1, 2));
        opt.step(&mut [("p", &mut p, &g)]);
        assert_eq!(p, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut opt = AdamState::new(0.01, 0.0);
        let mut p = array![[1.0]];
        let g = array![[1.0]];
        opt.step(&mut [("p", &mut p, &g)]);
        assert!((p[[0, 0]] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn repeated_identical_gradients_do_not_blow_up() {
        let mut opt = AdamState::new(0.01, 0.0);
        let mut p = array![[1.0]];
        let g = array![[1.0]];
        opt.step(&mut [("p", &mut p, &g)]);
        let first = 1.0 - p[[0, 0]];
        let before = p[[0, 0]];
        opt.step(&mut [("p", &mut p, &g)]);
        let second = before - p[[0, 0]];
        assert!(second <= first * 1.01, "second step {second} vs first {first}");
    }

    #[test]
    fn l2_term_shrinks_parameter() {
        let mut opt = AdamState::new(0.01, 0.1);
        let mut p = array![[1.0]];
        let g = Array2::zeros((1, 1));
        opt.step(&mut [("p", &mut p, &g)]);
        assert!(p[[0, 0]] < 1.0);
    }
}
