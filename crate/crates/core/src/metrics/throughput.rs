use std::time::Instant;

use crate::error::{shape_str, Error, Result};
use crate::models::{ForwardMode, Model};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsMeasurement {
    pub batch: usize,
    pub iters: usize,
    pub seconds: f64,
    pub fps: f64,
}

/// Inference throughput over `iters` timed forward passes after `warmup`
/// untimed ones. Run it alone: concurrent work skews the timer.
pub fn fps(model: &Model, batch: &Tensor, warmup: usize, iters: usize) -> Result<FpsMeasurement> {
    if iters == 0 {
        return Err(Error::Contract("fps needs at least one timed iteration".into()));
    }
    let Some(&n) = batch.shape().first().filter(|_| batch.ndim() == 4) else {
        return Err(Error::Dimension(format!("fps batch must be [B, H, W, C], got {}", shape_str(batch.shape()))));
    };
    no_grad(|| -> Result<FpsMeasurement> {
        for _ in 0..warmup {
            model.forward(batch, &mut ForwardMode::Eval)?;
        }
        let start = Instant::now();
        for _ in 0..iters {
            model.forward(batch, &mut ForwardMode::Eval)?;
        }
        let seconds = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        Ok(FpsMeasurement { batch: n, iters, seconds, fps: (iters * n) as f64 / seconds })
    })
}
