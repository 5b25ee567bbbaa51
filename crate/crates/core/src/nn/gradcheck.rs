//! Central-difference gradient verification. Test utility: perturbs single
//! parameter elements and compares the numeric slope against the analytic
//! gradient captured from a backward pass.

use super::{ParamVisitor, Real};

#[derive(Debug, Clone)]
pub struct FdCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Relative error with an absolute floor so near-zero pairs do not explode.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn with_param<T: Real, M: ParamVisitor<T>, R>(
    model: &mut M,
    name: &str,
    f: impl FnOnce(&mut super::Param<T>) -> R,
) -> R {
    let mut f = Some(f);
    let mut out = None;
    model.visit_params_mut(&mut |p| {
        if p.name == name {
            if let Some(f) = f.take() {
                out = Some(f(p));
            }
        }
    });
    out.unwrap_or_else(|| panic!("no parameter named {name}"))
}

/// Checks `targets` (parameter name, element index) against central
/// differences of `loss` with step `h`. The analytic gradient must already
/// be accumulated in the model's grad buffers when this is called, and
/// `loss` must be a deterministic function of the parameters (dropout off).
pub fn check_many<M, L>(
    model: &mut M,
    targets: &[(String, usize)],
    h: f64,
    mut loss: L,
) -> Vec<FdCheck>
where
    M: ParamVisitor<f64>,
    L: FnMut(&mut M) -> f64,
{
    let mut results = Vec::with_capacity(targets.len());
    for (name, index) in targets {
        let analytic = with_param(model, name, |p| p.grad[*index]);
        with_param(model, name, |p| p.value[*index] += h);
        let up = loss(model);
        with_param(model, name, |p| p.value[*index] -= 2.0 * h);
        let down = loss(model);
        with_param(model, name, |p| p.value[*index] += h);
        let numeric = (up - down) / (2.0 * h);
        results.push(FdCheck {
            param: name.clone(),
            index: *index,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    results
}

/// All parameter names with their element counts, in visit order.
pub fn param_sizes<T: Real, M: ParamVisitor<T>>(model: &M) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    model.visit_params(&mut |p| out.push((p.name.clone(), p.len())));
    out
}
