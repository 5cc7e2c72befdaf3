//! Central finite differences for checking analytic gradients.

use super::graph::{Graph, Matrix, Var};
use super::net::{BoundParams, DenseNet};
use crate::error::Result;

/// Central-difference estimate of `∂f/∂x` at `x`, one entry at a time.
pub fn central_difference<F>(x: &Matrix, h: f64, mut f: F) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe)?;
        probe[[r, c]] = orig - h;
        let down = f(&probe)?;
        probe[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with Frobenius norms. Two zero matrices
/// compare equal; otherwise the denominator is floored at 1e-12.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim(), "relative_error shapes");
    let norm = |m: &Matrix| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&(analytic - numeric));
    if diff == 0.0 {
        return 0.0;
    }
    diff / norm(analytic).max(norm(numeric)).max(1e-12)
}

/// Worst [`relative_error`] over the parameter tensors of `net` between the
/// graph gradient of `loss` and central differences with step `h`.
pub fn check_param_gradients<F>(net: &DenseNet, h: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph, &DenseNet, &BoundParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = net.params.bind(&mut g);
    let out = loss(&mut g, net, &bound)?;
    let analytic = g.grad_values(out, &bound.vars())?;
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        let base = net.params.tensors().nth(t).expect("tensor index").clone();
        let numeric = central_difference(&base, h, |probe| {
            let mut perturbed = net.clone();
            *perturbed.params.tensors_mut().nth(t).expect("tensor index") = probe.clone();
            let mut g = Graph::new();
            let bound = perturbed.params.bind(&mut g);
            let out = loss(&mut g, &perturbed, &bound)?;
            Ok(g.scalar(out))
        })?;
        worst = worst.max(relative_error(grad, &numeric));
    }
    Ok(worst)
}
