use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Missing gradients count as zero.
/// Returns fresh leaf tensors; the inputs are left untouched.
pub fn adam_step(params: &[Tensor], grads: &[Option<Vec<f64>>], state: &mut AdamState, lr: f64) -> Result<Vec<Tensor>> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let grad_ok = g.as_ref().is_none_or(|g| g.len() == p.numel());
        if !grad_ok || state.first[i].len() != p.numel() {
            return Err(Error::Contract(format!(
                "adam: parameter {i} of shape {} does not match its gradient/state",
                shape_str(p.shape())
            )));
        }
    }
    if !(lr >= 0.0) {
        return Err(Error::Contract(format!("learning rate must be >= 0, got {lr}")));
    }

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - BETA1.powi(t);
    let correction2 = 1.0 - BETA2.powi(t);

    let mut out = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        let mut data = p.data().to_vec();
        if let Some(g) = &grads[i] {
            for j in 0..data.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        } else {
            for j in 0..data.len() {
                m[j] *= BETA1;
                v[j] *= BETA2;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        out.push(Tensor::from_vec(data, p.shape())?.requires_grad_());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let p = vec![Tensor::from_vec(vec![1.0, -2.0], &[2]).unwrap()];
        let mut state = AdamState::new(&p);
        let out = adam_step(&p, &[Some(vec![0.0, 0.0])], &mut state, 0.1).unwrap();
        assert_eq!(out[0].data(), p[0].data());
        let out = adam_step(&out, &[None], &mut state, 0.1).unwrap();
        assert_eq!(out[0].data(), p[0].data());
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let p = vec![Tensor::from_vec(vec![0.5, 0.5, 0.5], &[3]).unwrap()];
        let mut state = AdamState::new(&p);
        let out = adam_step(&p, &[Some(vec![3.0, -0.01, 250.0])], &mut state, 0.01).unwrap();
        let deltas: Vec<f64> = out[0].data().iter().map(|v| v - 0.5).collect();
        for (d, s) in deltas.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((d - s * 0.01).abs() < 1e-7, "{d}");
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(w) = (w - 3)^2 with analytic gradient 2(w - 3)
        let mut w = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&w);
        for _ in 0..300 {
            let g = 2.0 * (w[0].data()[0] - 3.0);
            w = adam_step(&w, &[Some(vec![g])], &mut state, 0.1).unwrap();
        }
        let x = w[0].clone();
        let loss = x.add_scalar(-3.0).mul(&x.add_scalar(-3.0)).unwrap().sum();
        loss.backward().unwrap();
        let g = x.grad().unwrap()[0];
        assert!((g - 2.0 * (x.data()[0] - 3.0)).abs() < 1e-12);
        assert!((x.data()[0] - 3.0).abs() < 1e-5, "{}", x.data()[0]);
    }

    #[test]
    fn mismatched_state_is_contract_error() {
        let p = vec![Tensor::ones(&[2])];
        let mut state = AdamState::new(&[Tensor::ones(&[3])]);
        assert!(matches!(adam_step(&p, &[None], &mut state, 0.1), Err(Error::Contract(_))));
        let mut state = AdamState::new(&p);
        assert!(adam_step(&p, &[Some(vec![1.0])], &mut state, 0.1).is_err());
    }
}
