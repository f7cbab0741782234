//! Central-difference gradient verification.
//!
//! `grad_check` treats the model as a black-box scalar function of the
//! parameter arena. The closure must run a full forward + backward pass,
//! leave gradients accumulated in the arena, and return the loss. Stochastic
//! layers must draw their randomness from state the closure re-clones on
//! every call so repeated evaluations see identical masks; otherwise finite
//! differences are meaningless.

use crate::error::Result;
use crate::layer::ParamArena;
use crate::tensor::Tensor;

/// Outcome of a finite-difference sweep over all trainable parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all checked elements.
    pub max_rel_err: f64,
    /// Parameter name and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Number of scalar elements checked.
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(L(p + eps) - L(p - eps)) / (2 eps)` for every trainable element.
///
/// Relative error per element is `|a - n| / max(1, |a|, |n|)`: relative for
/// large gradients, absolute below unit scale so dead units with exactly-zero
/// analytic gradients do not drown in finite-difference noise.
pub fn grad_check<F>(mut loss_fn: F, arena: &mut ParamArena, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamArena) -> Result<f64>,
{
    arena.zero_grads();
    let _ = loss_fn(arena)?;
    let analytic: Vec<Option<Tensor>> = arena
        .iter()
        .map(|p| if p.trainable { Some(p.grad.clone()) } else { None })
        .collect();

    let names: Vec<String> = arena.iter().map(|p| p.name.clone()).collect();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0 };

    for (pi, grads) in analytic.iter().enumerate() {
        let Some(grads) = grads else { continue };
        for ei in 0..grads.len() {
            let id = nth_id(arena, pi);
            let orig = arena.value(id).data()[ei];

            arena.value_mut(id).data_mut()[ei] = orig + eps;
            let plus = loss_fn(arena)?;
            arena.value_mut(id).data_mut()[ei] = orig - eps;
            let minus = loss_fn(arena)?;
            arena.value_mut(id).data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads.data()[ei];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((names[pi].clone(), ei));
            }
        }
    }
    // Leave the arena with clean gradient state.
    arena.zero_grads();
    Ok(report)
}

fn nth_id(arena: &ParamArena, index: usize) -> crate::layer::ParamId {
    // ParamIds are allocation-ordered; recover the handle via the name table.
    let name = arena.iter().nth(index).expect("index in range").name.clone();
    arena.find(&name).expect("name registered")
}
