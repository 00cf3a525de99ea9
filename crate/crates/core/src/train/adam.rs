//! Adam with bias correction and the stepped learning-rate schedule.

use super::TrainConfig;
use crate::tensor::Scalar;

/// First/second moment buffers mirroring the flat parameter list, plus the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update on a single parameter buffer.
/// `t_step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t_step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(param.len(), grad.len(), "adam_step: parameter/gradient shape mismatch");
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one = T::ONE;
    let corr1 = T::from_f64(1.0 - beta1.powi(t_step as i32));
    let corr2 = T::from_f64(1.0 - beta2.powi(t_step as i32));
    let lr_t = T::from_f64(lr);
    let epsv = T::from_f64(eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        param[i] = param[i] - lr_t * m_hat / (v_hat.sqrt() + epsv);
    }
}

/// `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.lr_halve_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default_for_alpha(2)
    }

    #[test]
    fn schedule_values() {
        let cfg = cfg();
        assert_eq!(lr_at(0, &cfg), 2e-4);
        assert_eq!(lr_at(14, &cfg), 2e-4);
        assert_eq!(lr_at(15, &cfg), 1e-4);
        assert_eq!(lr_at(45, &cfg), 2.5e-5);
    }

    #[test]
    fn zero_gradient_zero_state_is_identity() {
        let mut p = vec![0.5f64, -1.25, 3.0];
        let mut m = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        let g = vec![0.0; 3];
        adam_step(&mut p, &g, &mut m, &mut v, 1, 1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(p, vec![0.5, -1.25, 3.0]);
    }

    #[test]
    fn lr_zero_is_identity() {
        let mut p = vec![0.5f64, -1.25];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        let g = vec![0.3, -0.7];
        adam_step(&mut p, &g, &mut m, &mut v, 1, 0.0, 0.9, 0.999, 1e-8);
        assert_eq!(p, vec![0.5, -1.25]);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // Bias correction makes m_hat / sqrt(v_hat) = g / |g| on step one.
        for &g0 in &[0.03f64, -2.5, 40.0] {
            let mut p = vec![1.0f64];
            let mut m = vec![0.0];
            let mut v = vec![0.0];
            adam_step(&mut p, &[g0], &mut m, &mut v, 1, 1e-3, 0.9, 0.999, 1e-8);
            let delta = (p[0] - 1.0).abs();
            assert!((delta - 1e-3).abs() < 1e-6, "g={g0}: delta {delta}");
        }
    }

    #[test]
    fn trajectory_matches_independent_reference() {
        // Second, independently coded Adam (accumulator form, powers tracked
        // incrementally) on the quadratic f(x) = 0.5 * x^T diag(1, 4) x.
        let beta1 = 0.9;
        let beta2 = 0.999;
        let eps = 1e-8;
        let lr = 0.05;

        let mut x = vec![1.0f64, -2.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];

        let mut x_ref = [1.0f64, -2.0];
        let mut m_ref = [0.0f64; 2];
        let mut v_ref = [0.0f64; 2];
        let mut b1_pow = 1.0f64;
        let mut b2_pow = 1.0f64;

        for t in 1..=5u64 {
            let grad = vec![x[0], 4.0 * x[1]];
            adam_step(&mut x, &grad, &mut m, &mut v, t, lr, beta1, beta2, eps);

            let grad_ref = [x_ref[0], 4.0 * x_ref[1]];
            b1_pow *= beta1;
            b2_pow *= beta2;
            for i in 0..2 {
                m_ref[i] = beta1 * m_ref[i] + (1.0 - beta1) * grad_ref[i];
                v_ref[i] = beta2 * v_ref[i] + (1.0 - beta2) * grad_ref[i] * grad_ref[i];
                let m_hat = m_ref[i] / (1.0 - b1_pow);
                let v_hat = v_ref[i] / (1.0 - b2_pow);
                x_ref[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            for i in 0..2 {
                assert!(
                    (x[i] - x_ref[i]).abs() <= 1e-10,
                    "step {t} coord {i}: {} vs {}",
                    x[i],
                    x_ref[i]
                );
            }
        }
    }
}
