use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Preset names accepted on the command line and in config files.
pub const PRESET_NAMES: [&str; 3] = ["ViT-B/16", "ViT-L/16", "ViT-L/32"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
    pub channels: usize,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub use_class_token: bool,
}

fn default_dropout() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let p = self.patch_size;
        if p == 0 || h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!("image size {h}x{w} is not divisible by patch size {p}")));
        }
        if self.channels == 0 || self.hidden_dim == 0 || self.depth == 0 || self.mlp_dim == 0 {
            return Err(Error::Config("channels, hidden_dim, depth and mlp_dim must be positive".into()));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Number of patches, `HW / P²`.
    pub fn num_patches(&self) -> usize {
        (self.image_size.0 / self.patch_size) * (self.image_size.1 / self.patch_size)
    }

    /// Sequence length seen by the encoder.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + usize::from(self.use_class_token)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Scalars in one encoder block.
    pub fn block_param_count(&self) -> usize {
        let d = self.hidden_dim;
        let m = self.mlp_dim;
        let norms = 2 * 2 * d;
        let attention = 4 * (d * d + d);
        let mlp = d * m + m + m * d + d;
        norms + attention + mlp
    }
}

/// Closed-form parameter count for `config`.
pub fn param_count(config: &ViTConfig) -> usize {
    let d = config.hidden_dim;
    let patch = config.patch_dim() * d + d;
    let class_token = if config.use_class_token { d } else { 0 };
    let positions = config.num_tokens() * d;
    let blocks = config.depth * config.block_param_count();
    let final_norm = 2 * d;
    let head = d * config.num_classes + config.num_classes;
    patch + class_token + positions + blocks + final_norm + head
}

/// Standard ViT variants; width and MLP size follow the original ViT family.
pub fn preset(name: &str, image_size: usize, num_classes: usize) -> Result<ViTConfig> {
    let (patch_size, hidden_dim, depth, heads, mlp_dim) = match name {
        "ViT-B/16" => (16, 768, 12, 12, 3072),
        "ViT-L/16" => (16, 1024, 24, 16, 4096),
        "ViT-L/32" => (32, 1024, 24, 16, 4096),
        other => {
            return Err(Error::Config(format!("unknown preset {other:?}; expected one of {}", PRESET_NAMES.join(", "))))
        }
    };
    let config = ViTConfig {
        image_size: (image_size, image_size),
        channels: 3,
        patch_size,
        hidden_dim,
        depth,
        heads,
        mlp_dim,
        num_classes,
        dropout: default_dropout(),
        use_class_token: true,
    };
    config.validate()?;
    Ok(config)
}
