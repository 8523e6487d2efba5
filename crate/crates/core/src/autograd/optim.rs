use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one group of tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        AdamState { step: 0, m, v }
    }

    pub fn for_params(params: &Params) -> Self {
        AdamState::new(params.iter().map(|(_, t)| t.len()))
    }
}

/// One Adam update. `grads[i]` pairs with `params[i]`; a missing gradient
/// is treated as zero.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Option<&Tensor>], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state sized for these parameters");
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let Some(g) = grads[i] else {
            for j in 0..m.len() {
                m[j] *= ADAM_BETA1;
                v[j] *= ADAM_BETA2;
                p.data_mut()[j] -= lr * (m[j] / bias1) / ((v[j] / bias2).sqrt() + ADAM_EPS);
            }
            continue;
        };
        let data = p.data_mut();
        for j in 0..data.len() {
            let gj = g.data()[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            data[j] -= lr * (m[j] / bias1) / ((v[j] / bias2).sqrt() + ADAM_EPS);
        }
    }
}

/// Projects every entry onto `[0, inf)`.
pub fn clamp_nonneg(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_examples() {
        let mut t = Tensor::row(vec![-1.0, 0.0, 2.0]);
        clamp_nonneg(&mut t);
        assert_eq!(t.data(), &[0.0, 0.0, 2.0]);
        let mut u = Tensor::row(vec![0.5, 3.0]);
        clamp_nonneg(&mut u);
        assert_eq!(u.data(), &[0.5, 3.0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::row(vec![1.5, -2.0]);
        let g = Tensor::row(vec![0.0, 0.0]);
        let mut state = AdamState::new([2]);
        for _ in 0..10 {
            adam_step(&mut [&mut p], &[Some(&g)], &mut state, 0.1);
        }
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert_eq!(state.step, 10);
    }

    fn minimize_quadratic() -> Vec<f64> {
        let mut x = Tensor::scalar(3.0);
        let mut state = AdamState::new([1]);
        let mut trajectory = Vec::new();
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * x.item());
            adam_step(&mut [&mut x], &[Some(&g)], &mut state, 0.01);
            trajectory.push(x.item());
        }
        trajectory
    }

    #[test]
    fn scalar_quadratic_converges() {
        let t = minimize_quadratic();
        assert!(t.last().unwrap().abs() < 1e-3, "ended at {}", t.last().unwrap());
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        assert_eq!(minimize_quadratic(), minimize_quadratic());
    }
}
