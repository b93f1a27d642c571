//! Losses, the Adam optimizer, the learning-rate schedule and the epoch loop.

mod adam;
mod losses;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use losses::{cross_entropy, focal_loss, inverse_frequency_weights, PROB_FLOOR};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{ForwardMode, Model};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
}

/// Focal class weights: explicit per-class values or derived from the
/// training split's class frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FocalAlpha {
    Named(String),
    Weights(Vec<f64>),
}

impl FocalAlpha {
    pub const INVERSE_FREQUENCY: &'static str = "inverse-frequency";

    /// Resolves to one weight per class.
    pub fn resolve(&self, class_counts: &[usize]) -> Result<Vec<f64>> {
        match self {
            FocalAlpha::Named(n) if n == Self::INVERSE_FREQUENCY => inverse_frequency_weights(class_counts),
            FocalAlpha::Named(n) => Err(Error::Config(format!(
                "focal_alpha must be {:?} or a list of weights, got {n:?}",
                Self::INVERSE_FREQUENCY
            ))),
            FocalAlpha::Weights(w) => {
                if w.len() != class_counts.len() {
                    return Err(Error::Config(format!(
                        "focal_alpha has {} weights for {} classes",
                        w.len(),
                        class_counts.len()
                    )));
                }
                Ok(w.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub focal_alpha: FocalAlpha,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied per epoch.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::CrossEntropy,
            focal_gamma: 2.0,
            focal_alpha: FocalAlpha::Named(FocalAlpha::INVERSE_FREQUENCY.into()),
            learning_rate: 1e-4,
            decay: 0.97,
            batch_size: 32,
            epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal_gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if let FocalAlpha::Weights(w) = &self.focal_alpha {
            if w.iter().any(|v| !(*v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
                return Err(Error::Config("focal_alpha weights must be non-negative and not all zero".into()));
            }
        }
        Ok(())
    }
}

/// `learning_rate · decay^epoch`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.learning_rate * config.decay.powi(epoch as i32)
}

/// The configured loss with resolved class weights.
#[derive(Debug, Clone)]
pub enum Objective {
    CrossEntropy,
    Focal { gamma: f64, alpha: Vec<f64> },
}

impl Objective {
    pub fn from_config(config: &TrainConfig, class_counts: &[usize]) -> Result<Self> {
        Ok(match config.loss {
            LossKind::CrossEntropy => Objective::CrossEntropy,
            LossKind::Focal => {
                Objective::Focal { gamma: config.focal_gamma, alpha: config.focal_alpha.resolve(class_counts)? }
            }
        })
    }

    pub fn loss(&self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        match self {
            Objective::CrossEntropy => cross_entropy(logits, labels),
            Objective::Focal { gamma, alpha } => focal_loss(logits, labels, *gamma, alpha),
        }
    }
}

/// Optimizer state bound to one model's parameter list.
pub struct Trainer {
    pub objective: Objective,
    pub state: AdamState,
}

impl Trainer {
    pub fn new(model: &Model, objective: Objective) -> Self {
        Trainer { objective, state: AdamState::new(&model.parameters()) }
    }

    /// One pass over `batches`: forward, loss, backward and an Adam update
    /// per batch at learning rate `lr`. Returns the sample-weighted mean loss.
    pub fn train_epoch<I>(&mut self, model: &mut Model, batches: I, lr: f64, rng: &mut ChaCha8Rng) -> Result<f64>
    where
        I: IntoIterator<Item = Result<Batch>>,
    {
        let mut total = 0.0;
        let mut seen = 0usize;
        for (index, batch) in batches.into_iter().enumerate() {
            let batch = batch.map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("batch {index}: {msg}")),
                other => other,
            })?;
            let params = model.parameters();
            params.iter().for_each(Tensor::zero_grad);
            let logits = model.forward(&batch.images, &mut ForwardMode::Train(rng))?;
            let loss = self.objective.loss(&logits, &batch.labels)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Contract(format!("batch {index}: loss became {value}")));
            }
            loss.backward()?;
            let grads: Vec<Option<Vec<f64>>> = params.iter().map(Tensor::grad).collect();
            let precision = model.precision();
            let updated =
                adam_step(&params, &grads, &mut self.state, lr)?.into_iter().map(|t| precision.apply(t)).collect();
            model.set_parameters(updated)?;
            total += value * batch.labels.len() as f64;
            seen += batch.labels.len();
        }
        if seen == 0 {
            return Err(Error::Data("training epoch saw no samples".into()));
        }
        Ok(total / seen as f64)
    }
}

/// Class probabilities for `images` without recording a graph.
pub fn predict_proba(model: &Model, images: &Tensor) -> Result<Tensor> {
    no_grad(|| model.forward(images, &mut ForwardMode::Eval)?.softmax(1))
}

/// Loss and accuracy over `batches` in eval mode.
pub fn evaluate_loss<I>(model: &Model, objective: &Objective, batches: I) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = Result<Batch>>,
{
    let (mut total, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for batch in batches {
        let batch = batch?;
        let (loss, logits) = no_grad(|| -> Result<(f64, Tensor)> {
            let logits = model.forward(&batch.images, &mut ForwardMode::Eval)?;
            Ok((objective.loss(&logits, &batch.labels)?.item()?, logits))
        })?;
        let k = logits.shape()[1];
        for (row, &y) in logits.data().chunks(k).zip(&batch.labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
        total += loss * batch.labels.len() as f64;
        seen += batch.labels.len();
    }
    if seen == 0 {
        return Err(Error::Data("evaluation saw no samples".into()));
    }
    Ok((total / seen as f64, correct as f64 / seen as f64))
}

/// Index of the largest value; first wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
