//! SGD with classical momentum and decoupled-from-nothing weight decay:
//! decay is folded into the gradient before the momentum update, i.e.
//!
//! ```text
//! buf   <- momentum * buf + (grad + weight_decay * value)
//! value <- value - lr * buf
//! ```
//!
//! Gradients are zeroed after the step so accumulation across batches cannot
//! happen silently.

use crate::error::{Result, ScanError};
use crate::layer::ParamArena;

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.0075, momentum: 0.9, weight_decay: 1e-5 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ScanError::config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ScanError::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ScanError::config(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Applies one SGD step to every trainable parameter in the arena.
///
/// Aborts with a diagnostic naming the parameter if any gradient element is
/// NaN or infinite; parameters are left untouched in that case.
pub fn sgd_step(arena: &mut ParamArena, cfg: &SgdConfig) -> Result<()> {
    for p in arena.iter() {
        if p.trainable && !p.grad.is_finite() {
            return Err(ScanError::numeric(format!(
                "non-finite gradient in parameter '{}'",
                p.name
            )));
        }
    }
    for p in arena.iter_mut() {
        if !p.trainable {
            p.grad.fill(0.0);
            continue;
        }
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let buf = p.momentum_buf.data_mut();
        for i in 0..value.len() {
            let g = grad[i] + cfg.weight_decay * value[i];
            buf[i] = cfg.momentum * buf[i] + g;
            value[i] -= cfg.lr * buf[i];
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn arena_with(value: f64) -> (ParamArena, crate::layer::ParamId) {
        let mut arena = ParamArena::new();
        let id = arena.alloc("w", Tensor::from_vec(vec![1], vec![value]).unwrap(), true);
        (arena, id)
    }

    fn set_grad(arena: &mut ParamArena, id: crate::layer::ParamId, g: f64) {
        arena.accumulate_grad(id, &Tensor::from_vec(vec![1], vec![g]).unwrap());
    }

    #[test]
    fn plain_step_without_momentum_or_decay() {
        let (mut arena, id) = arena_with(1.0);
        set_grad(&mut arena, id, 1.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        sgd_step(&mut arena, &cfg).unwrap();
        assert!((arena.value(id).data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let (mut arena, id) = arena_with(1.0);
        set_grad(&mut arena, id, 0.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 1e-5 };
        sgd_step(&mut arena, &cfg).unwrap();
        assert!((arena.value(id).data()[0] - 0.999_999).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates_across_steps() {
        let (mut arena, id) = arena_with(1.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        // step 1: buf = 1, w = 0.9; step 2: buf = 1.9, w = 0.71
        set_grad(&mut arena, id, 1.0);
        sgd_step(&mut arena, &cfg).unwrap();
        assert!((arena.value(id).data()[0] - 0.9).abs() < 1e-15);
        set_grad(&mut arena, id, 1.0);
        sgd_step(&mut arena, &cfg).unwrap();
        assert!((arena.value(id).data()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn grads_are_zeroed_after_step() {
        let (mut arena, id) = arena_with(1.0);
        set_grad(&mut arena, id, 1.0);
        sgd_step(&mut arena, &SgdConfig::default()).unwrap();
        assert_eq!(arena.state(id).grad.data()[0], 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let (mut arena, id) = arena_with(1.0);
        set_grad(&mut arena, id, f64::NAN);
        let err = sgd_step(&mut arena, &SgdConfig::default()).unwrap_err();
        assert!(err.to_string().contains("'w'"), "diagnostic should name the parameter: {err}");
        // Value untouched by the aborted step.
        assert_eq!(arena.value(id).data()[0], 1.0);
    }

    #[test]
    fn non_trainable_entries_are_skipped() {
        let mut arena = ParamArena::new();
        let id = arena.alloc("bn.running_mean", Tensor::from_vec(vec![1], vec![0.5]).unwrap(), false);
        arena.accumulate_grad(id, &Tensor::from_vec(vec![1], vec![10.0]).unwrap());
        sgd_step(&mut arena, &SgdConfig { lr: 1.0, momentum: 0.0, weight_decay: 0.0 }).unwrap();
        assert_eq!(arena.value(id).data()[0], 0.5);
    }
}
