//! Classifiers sharing one `forward(images) -> logits` contract, plus
//! checkpoint persistence.

mod cnn;
mod config;
mod layers;
mod vit;

pub use cnn::{Cnn, CnnConfig};
pub use config::{param_count, preset, ViTConfig, PRESET_NAMES};
pub use layers::{dropout, trunc_normal, ForwardMode, Linear, Norm, LAYER_NORM_EPS};
pub use vit::{patchify, patchify_batch, unpatchify, BlockParams, Vit, VitParams};

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, DType, Tensor};

pub const CHECKPOINT_CONFIG: &str = "config.toml";
pub const CHECKPOINT_PARAMS: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelConfig {
    #[serde(rename = "vit")]
    Vit(ViTConfig),
    #[serde(rename = "cnn-baseline")]
    Cnn(CnnConfig),
}

impl ModelConfig {
    pub fn image_size(&self) -> (usize, usize) {
        match self {
            ModelConfig::Vit(c) => c.image_size,
            ModelConfig::Cnn(c) => c.image_size,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.channels,
            ModelConfig::Cnn(c) => c.channels,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.num_classes,
            ModelConfig::Cnn(c) => c.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Vit(c) => c.validate(),
            ModelConfig::Cnn(c) => c.validate(),
        }
    }
}

/// Storage precision of parameters. Arithmetic is always 64-bit; `F32`
/// rounds parameters to single precision after every update and stores
/// them as f32 in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be 32 or 64, got {other}"))),
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }

    /// Rounds a parameter to this precision, preserving gradient tracking.
    pub fn apply(self, t: Tensor) -> Tensor {
        match self {
            Precision::F64 => t,
            Precision::F32 => {
                let data = t.data().iter().map(|&v| v as f32 as f64).collect();
                let out = Tensor::from_vec(data, t.shape()).expect("same shape");
                if t.requires_grad() {
                    out.requires_grad_()
                } else {
                    out
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    name: String,
    precision: Precision,
    model: ModelConfig,
}

#[derive(Clone, Debug)]
enum Network {
    Vit(Vit),
    Cnn(Cnn),
}

/// A named classifier.
#[derive(Clone, Debug)]
pub struct Model {
    name: String,
    precision: Precision,
    net: Network,
}

impl Model {
    pub fn new(name: impl Into<String>, config: &ModelConfig, seed: u64, precision: Precision) -> Result<Self> {
        let net = match config {
            ModelConfig::Vit(c) => Network::Vit(Vit::new(c.clone(), seed)?),
            ModelConfig::Cnn(c) => Network::Cnn(Cnn::new(c.clone(), seed)?),
        };
        let mut model = Model { name: name.into(), precision, net };
        let rounded = model.parameters().into_iter().map(|t| precision.apply(t)).collect();
        model.set_parameters(rounded)?;
        Ok(model)
    }

    pub fn from_vit(name: impl Into<String>, vit: Vit) -> Self {
        Model { name: name.into(), precision: Precision::F64, net: Network::Vit(vit) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn config(&self) -> ModelConfig {
        match &self.net {
            Network::Vit(v) => ModelConfig::Vit(v.config.clone()),
            Network::Cnn(c) => ModelConfig::Cnn(c.config.clone()),
        }
    }

    pub fn as_vit(&self) -> Option<&Vit> {
        match &self.net {
            Network::Vit(v) => Some(v),
            Network::Cnn(_) => None,
        }
    }

    pub fn as_vit_mut(&mut self) -> Option<&mut Vit> {
        match &mut self.net {
            Network::Vit(v) => Some(v),
            Network::Cnn(_) => None,
        }
    }

    /// `images: [B, H, W, C]` to logits `[B, K]`.
    pub fn forward(&self, images: &Tensor, mode: &mut ForwardMode<'_>) -> Result<Tensor> {
        match &self.net {
            Network::Vit(v) => v.forward(images, mode),
            Network::Cnn(c) => c.forward(images, mode),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        match &self.net {
            Network::Vit(v) => v.params.tensors(),
            Network::Cnn(c) => c.tensors(),
        }
    }

    pub fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        match &mut self.net {
            Network::Vit(v) => v.params.set_tensors(params),
            Network::Cnn(c) => c.set_tensors(params),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Writes `config.toml` and `params.bin` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CheckpointMeta { name: self.name.clone(), precision: self.precision, model: self.config() };
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        let cfg_path = dir.join(CHECKPOINT_CONFIG);
        fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;

        let params_path = dir.join(CHECKPOINT_PARAMS);
        let file = fs::File::create(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let mut w = BufWriter::new(file);
        tensor::write_tensors(&mut w, &self.parameters(), self.precision.dtype())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&params_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CHECKPOINT_CONFIG);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let meta: CheckpointMeta =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", cfg_path.display())))?;
        let mut model = Model::new(meta.name, &meta.model, 0, meta.precision)?;

        let params_path = dir.join(CHECKPOINT_PARAMS);
        let file = fs::File::open(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let tensors = tensor::read_tensors(&mut BufReader::new(file)).map_err(|e| Error::io(&params_path, e))?;
        let tracked = tensors.into_iter().map(Tensor::requires_grad_).collect();
        model.set_parameters(tracked)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vit() -> ModelConfig {
        ModelConfig::Vit(ViTConfig {
            image_size: (8, 8),
            channels: 3,
            patch_size: 4,
            hidden_dim: 8,
            depth: 1,
            heads: 2,
            mlp_dim: 8,
            num_classes: 2,
            dropout: 0.1,
            use_class_token: true,
        })
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (cfg, precision) in [
            (tiny_vit(), Precision::F64),
            (tiny_vit(), Precision::F32),
            (ModelConfig::Cnn(CnnConfig::new((8, 8), 3, 2)), Precision::F64),
        ] {
            let model = Model::new("m", &cfg, 7, precision).unwrap();
            let path = dir.path().join(format!("{precision:?}"));
            model.save(&path).unwrap();
            let back = Model::load(&path).unwrap();
            assert_eq!(back.config(), cfg);
            assert_eq!(back.precision(), precision);
            for (a, b) in model.parameters().iter().zip(back.parameters()) {
                assert_eq!(a.data(), b.data());
                assert!(b.requires_grad());
            }
        }
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Model::load(&dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn config_sidecar_is_readable_text() {
        let dir = tempfile::tempdir().unwrap();
        Model::new("tiny", &tiny_vit(), 1, Precision::F64).unwrap().save(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(CHECKPOINT_CONFIG)).unwrap();
        assert!(text.contains("kind = \"vit\""), "{text}");
        assert!(text.contains("patch_size = 4"), "{text}");
    }
}
