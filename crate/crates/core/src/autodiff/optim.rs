use thiserror::Error;

use super::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite gradient, step aborted")]
    NonFiniteGradient,
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///
/// `v <- momentum * v + grad + weight_decay * param`, `param <- param - lr * v`.
///
/// AULU betas use the same update without weight decay, and are skipped
/// entirely when the store has `freeze_adaptive` set. Nothing is modified if
/// any gradient is non-finite.
pub fn sgd_step(
    params: &mut ParamStore,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), OptimError> {
    if !params.grads_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    for (value, grad, velocity) in params.update_slots() {
        for ((v, p), g) in velocity
            .data_mut()
            .iter_mut()
            .zip(value.data_mut())
            .zip(grad.data())
        {
            *v = momentum * *v + g + weight_decay * *p;
            *p -= lr * *v;
        }
    }
    if !params.freeze_adaptive {
        for (p, v) in params.adaptive.iter_mut().zip(&mut params.adaptive_velocity) {
            v[0] = momentum * v[0] + p.grad_beta1;
            v[1] = momentum * v[1] + p.grad_beta2;
            p.beta1 -= lr * v[0];
            p.beta2 -= lr * v[1];
        }
    }
    Ok(())
}

/// Linear warmup over the first `ceil(total_steps / 10)` steps, then constant:
/// `base_lr * min(1, (step + 1) / warmup)`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    let warmup = total_steps.div_ceil(10).max(1);
    let frac = ((step + 1) as f64 / warmup as f64).min(1.0);
    base_lr * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::AdaptiveParams;
    use crate::tensor::Tensor;

    fn store(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full(vec![3], value)).unwrap();
        s.grad_mut(id).fill(grad);
        s
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut s = store(1.25, 3.0);
        s.add_adaptive(AdaptiveParams::new(0.5, 0.7));
        s.adaptive[0].grad_beta1 = 2.0;
        let before = s.clone();
        sgd_step(&mut s, 0.0, 0.9, 0.1).unwrap();
        assert_eq!(s.value(0), before.value(0));
        assert_eq!(s.adaptive[0].beta1, 0.5);
    }

    #[test]
    fn plain_sgd() {
        let mut s = store(1.0, 0.5);
        sgd_step(&mut s, 0.1, 0.0, 0.0).unwrap();
        assert!(s.value(0).data().iter().all(|&w| (w - 0.95).abs() < 1e-15));
    }

    #[test]
    fn momentum_two_steps() {
        let (lr, g) = (0.1, 0.5);
        let mut s = store(1.0, g);
        sgd_step(&mut s, lr, 0.9, 0.0).unwrap();
        sgd_step(&mut s, lr, 0.9, 0.0).unwrap();
        let expected = 1.0 - lr * (g + 1.9 * g);
        assert!((s.value(0).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn betas_get_no_weight_decay() {
        let mut s = store(1.0, 0.0);
        s.add_adaptive(AdaptiveParams::new(0.5, 0.7));
        sgd_step(&mut s, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(s.adaptive[0].beta1, 0.5);
        assert!((s.value(0).data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn frozen_betas_stay_put() {
        let mut s = store(1.0, 0.0);
        s.add_adaptive(AdaptiveParams::new(0.5, 0.7));
        s.adaptive[0].grad_beta2 = 1.0;
        s.freeze_adaptive = true;
        sgd_step(&mut s, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(s.adaptive[0].beta2, 0.7);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = store(1.0, f64::NAN);
        let before = s.clone();
        assert_eq!(sgd_step(&mut s, 0.1, 0.9, 0.0), Err(OptimError::NonFiniteGradient));
        assert_eq!(s.value(0), before.value(0));
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_schedule(99, 100, 0.1), 0.1);
        assert!((lr_schedule(0, 100, 0.1) - 0.01).abs() < 1e-17);
        assert_eq!(lr_schedule(9, 100, 0.1), 0.1);
        assert_eq!(lr_schedule(0, 5, 1.0), 1.0);
        for s in 0..50 {
            assert_eq!(lr_schedule(s, 50, 0.0), 0.0);
        }
    }
}
