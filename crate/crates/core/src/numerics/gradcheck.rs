use super::{Mlp, Tensor};
use crate::error::Result;

/// Largest `|analytic - central difference| / max(1, |analytic|)` over all
/// coordinates of `params`. `loss` is evaluated at perturbed copies; `params`
/// is restored before returning.
pub fn max_relative_gradient_error<F>(params: &mut [f64], analytic: &[f64], eps: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let up = loss(params);
        params[i] = orig - eps;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Gradient check of an MLP under a scalar loss of its output.
///
/// `loss_fn` maps the network output to `(loss, dloss/doutput)`.
pub fn finite_diff_check<L>(mlp: &Mlp, input: &Tensor, loss_fn: L, eps: f64) -> Result<f64>
where
    L: Fn(&Tensor) -> (f64, Tensor),
{
    let (out, cache) = mlp.forward(input)?;
    let (_, dout) = loss_fn(&out);
    let (grads, _) = mlp.backward(&cache, &dout)?;
    let analytic = grads.flatten();
    let mut params = mlp.flatten();
    let mut probe = mlp.clone();
    let err = max_relative_gradient_error(&mut params, &analytic, eps, |p| {
        probe.load_flat(p).expect("perturbed parameters stay finite");
        let (o, _) = probe.forward(input).expect("shape already validated");
        loss_fn(&o).0
    });
    Ok(err)
}
