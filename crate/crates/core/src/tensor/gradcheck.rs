use super::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of scalar `f` at `x` with the
/// fourth-order central difference of step `h`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1e-12, |analytic_i| + |numeric_i|)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be > 0, got {h}")));
    }
    let leaf = x.detach().requires_grad_();
    let loss = f(&leaf)?;
    let analytic = if loss.requires_grad() {
        loss.backward()?;
        leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()])
    } else {
        vec![0.0; x.numel()]
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.data().to_vec();
    let mut eval_at = |i: usize, value: f64| -> Result<f64> {
        let orig = probe[i];
        probe[i] = value;
        let out = no_grad(|| f(&Tensor::raw(probe.clone(), x.shape().to_vec())))?.item();
        probe[i] = orig;
        out
    };
    for (i, &xi) in x.data().iter().enumerate() {
        let (p1, m1) = (eval_at(i, xi + h)?, eval_at(i, xi - h)?);
        let (p2, m2) = (eval_at(i, xi + 2.0 * h)?, eval_at(i, xi - 2.0 * h)?);
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
