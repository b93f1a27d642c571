use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Whether a forward pass runs in training mode (dropout active, drawing
/// masks from the given generator) or evaluation mode.
pub enum ForwardMode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl ForwardMode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, ForwardMode::Train(_))
    }
}

/// Normal(0, σ) truncated to ±2σ by resampling.
pub fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::raw(data, shape.to_vec())
}

/// Affine map `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: trunc_normal(rng, &[fan_in, fan_out], INIT_STD).requires_grad_(),
            bias: Tensor::zeros(&[fan_out]).requires_grad_(),
        }
    }

    /// `x: [rows, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_bias(&self.bias)
    }

    pub(crate) fn slots_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn slots(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Norm {
    pub fn init(dim: usize) -> Self {
        Norm { gamma: Tensor::ones(&[dim]).requires_grad_(), beta: Tensor::zeros(&[dim]).requires_grad_() }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LAYER_NORM_EPS)
    }

    pub(crate) fn slots_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub(crate) fn slots(&self) -> [&Tensor; 2] {
        [&self.gamma, &self.beta]
    }
}

/// Inverted dropout; identity in eval mode or at rate 0.
pub fn dropout(x: &Tensor, rate: f64, mode: &mut ForwardMode<'_>) -> Result<Tensor> {
    match mode {
        ForwardMode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..x.numel()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
            x.mask(&mask)
        }
        _ => Ok(x.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn trunc_normal_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = trunc_normal(&mut rng, &[1000], 0.02);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let mean: f64 = t.data().iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.003);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let x = Tensor::ones(&[10]);
        let y = dropout(&x, 0.5, &mut ForwardMode::Eval).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_train_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::ones(&[200]);
        let y = dropout(&x, 0.25, &mut ForwardMode::Train(&mut rng)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        assert!(y.data().contains(&0.0));
    }
}
