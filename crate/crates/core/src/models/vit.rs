//! Vision Transformer classifier.
//!
//! Per image: split into non-overlapping `P×P` patches, project each flattened
//! patch to width `D`, prepend the class token, add the positional embedding,
//! run `L` pre-norm encoder blocks
//!
//! ```text
//! z'_l = MSA(LN(z_{l-1})) + z_{l-1}
//! z_l  = MLP(LN(z'_l))    + z'_l
//! ```
//!
//! then apply a final LayerNorm and the linear head to the class-token row
//! (or to the token mean when the class token is disabled).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ViTConfig;
use super::layers::{dropout, trunc_normal, ForwardMode, Linear, Norm};
use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;

const POS_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub norm1: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl BlockParams {
    fn init(rng: &mut ChaCha8Rng, d: usize, mlp: usize) -> Self {
        BlockParams {
            norm1: Norm::init(d),
            query: Linear::init(rng, d, d),
            key: Linear::init(rng, d, d),
            value: Linear::init(rng, d, d),
            out: Linear::init(rng, d, d),
            norm2: Norm::init(d),
            fc1: Linear::init(rng, d, mlp),
            fc2: Linear::init(rng, mlp, d),
        }
    }

    const SLOT_NAMES: [&'static str; 16] = [
        "norm1.gamma",
        "norm1.beta",
        "query.weight",
        "query.bias",
        "key.weight",
        "key.bias",
        "value.weight",
        "value.bias",
        "out.weight",
        "out.bias",
        "norm2.gamma",
        "norm2.beta",
        "fc1.weight",
        "fc1.bias",
        "fc2.weight",
        "fc2.bias",
    ];

    fn slots(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(16);
        v.extend(self.norm1.slots());
        v.extend(self.query.slots());
        v.extend(self.key.slots());
        v.extend(self.value.slots());
        v.extend(self.out.slots());
        v.extend(self.norm2.slots());
        v.extend(self.fc1.slots());
        v.extend(self.fc2.slots());
        v
    }

    fn slots_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(16);
        v.extend(self.norm1.slots_mut());
        v.extend(self.query.slots_mut());
        v.extend(self.key.slots_mut());
        v.extend(self.value.slots_mut());
        v.extend(self.out.slots_mut());
        v.extend(self.norm2.slots_mut());
        v.extend(self.fc1.slots_mut());
        v.extend(self.fc2.slots_mut());
        v
    }

    /// Zeroes every projection in both residual branches.
    pub fn zero_sublayers(&mut self) {
        for lin in [&mut self.query, &mut self.key, &mut self.value, &mut self.out, &mut self.fc1, &mut self.fc2] {
            for slot in lin.slots_mut() {
                *slot = Tensor::zeros(slot.shape()).requires_grad_();
            }
        }
    }
}

/// Learnable parameters of a [`Vit`].
#[derive(Clone, Debug)]
pub struct VitParams {
    pub patch_proj: Linear,
    /// `[1, D]`, present when the config enables the class token.
    pub class_token: Option<Tensor>,
    /// `[T, D]` with `T = N (+1 with class token)`.
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockParams>,
    pub norm: Norm,
    pub head: Linear,
}

impl VitParams {
    pub fn init(config: &ViTConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        VitParams {
            patch_proj: Linear::init(&mut rng, config.patch_dim(), d),
            class_token: config.use_class_token.then(|| Tensor::zeros(&[1, d]).requires_grad_()),
            pos_embed: trunc_normal(&mut rng, &[config.num_tokens(), d], POS_INIT_STD).requires_grad_(),
            blocks: (0..config.depth).map(|_| BlockParams::init(&mut rng, d, config.mlp_dim)).collect(),
            norm: Norm::init(d),
            head: Linear::init(&mut rng, d, config.num_classes),
        }
    }

    /// All parameter tensors in a fixed order, with dotted names.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("patch_proj.weight".to_string(), self.patch_proj.weight.clone()),
            ("patch_proj.bias".to_string(), self.patch_proj.bias.clone()),
        ];
        if let Some(cls) = &self.class_token {
            out.push(("class_token".into(), cls.clone()));
        }
        out.push(("pos_embed".into(), self.pos_embed.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BlockParams::SLOT_NAMES.iter().zip(b.slots()) {
                out.push((format!("blocks.{i}.{name}"), t.clone()));
            }
        }
        out.push(("norm.gamma".into(), self.norm.gamma.clone()));
        out.push(("norm.beta".into(), self.norm.beta.clone()));
        out.push(("head.weight".into(), self.head.weight.clone()));
        out.push(("head.bias".into(), self.head.bias.clone()));
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.patch_proj.weight, &mut self.patch_proj.bias];
        if let Some(cls) = &mut self.class_token {
            out.push(cls);
        }
        out.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            out.extend(b.slots_mut());
        }
        out.extend(self.norm.slots_mut());
        out.extend(self.head.slots_mut());
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Replaces every tensor, in [`VitParams::named`] order; shapes must match.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let mut slots = self.slots_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Contract(format!("expected {} parameter tensors, got {}", slots.len(), tensors.len())));
        }
        for (slot, t) in slots.iter().zip(&tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "parameter shape {} replaced by {}",
                    shape_str(slot.shape()),
                    shape_str(t.shape())
                )));
            }
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            **slot = t;
        }
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Splits `images: [B, H, W, C]` into `[B, N, P·P·C]`. Patches are ordered
/// row-major over the patch grid; each patch is flattened row-major as
/// `(row, col, channel)`.
pub fn patchify_batch(images: &Tensor, patch: usize) -> Result<Tensor> {
    let &[b, h, w, c] = images.shape() else {
        return Err(Error::Dimension(format!("expected images [B, H, W, C], got {}", shape_str(images.shape()))));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!("image {h}x{w} is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    images.reshape(&[b, gh, patch, gw, patch, c])?.permute(&[0, 1, 3, 2, 4, 5])?.reshape(&[
        b,
        gh * gw,
        patch * patch * c,
    ])
}

/// Single-image form: `[H, W, C]` to `[N, P·P·C]`.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Dimension(format!("expected image [H, W, C], got {}", shape_str(image.shape()))));
    };
    let n = patchify_batch(&image.reshape(&[1, h, w, c])?, patch)?;
    let (tokens, dim) = (n.shape()[1], n.shape()[2]);
    n.reshape(&[tokens, dim])
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, height: usize, width: usize, channels: usize, patch: usize) -> Result<Tensor> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::Config(format!("image {height}x{width} is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (height / patch, width / patch);
    patches.reshape(&[gh, gw, patch, patch, channels])?.permute(&[0, 2, 1, 3, 4])?.reshape(&[height, width, channels])
}

#[derive(Clone, Debug)]
pub struct Vit {
    pub config: ViTConfig,
    pub params: VitParams,
}

impl Vit {
    pub fn new(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = VitParams::init(&config, seed);
        Ok(Vit { config, params })
    }

    /// Patch projection, class token and positional embedding.
    ///
    /// `patches` is `[N, P²C]` (returns `[T, D]`) or `[B, N, P²C]` (returns
    /// `[B, T, D]`).
    pub fn embed(&self, patches: &Tensor) -> Result<Tensor> {
        self.embed_inner(patches, &mut ForwardMode::Eval)
    }

    fn embed_inner(&self, patches: &Tensor, mode: &mut ForwardMode<'_>) -> Result<Tensor> {
        let cfg = &self.config;
        let (n, pd) = (cfg.num_patches(), cfg.patch_dim());
        let (batch, single) = match patches.shape() {
            &[rows, cols] if rows == n && cols == pd => (1, true),
            &[b, rows, cols] if rows == n && cols == pd => (b, false),
            other => {
                return Err(Error::Config(format!(
                    "patches {} do not match config (N={n}, P²C={pd})",
                    shape_str(other)
                )))
            }
        };
        let d = cfg.hidden_dim;
        let projected = self.params.patch_proj.forward(&patches.reshape(&[batch * n, pd])?)?.reshape(&[batch, n, d])?;
        let tokens = match &self.params.class_token {
            Some(cls) => {
                let cls = cls.expand_leading(batch);
                Tensor::concat(&[cls, projected], 1)?
            }
            None => projected,
        };
        let x = tokens.add(&self.params.pos_embed.expand_leading(batch))?;
        let x = dropout(&x, cfg.dropout, mode)?;
        if single {
            x.reshape(&[cfg.num_tokens(), d])
        } else {
            Ok(x)
        }
    }

    /// Multi-head self-attention over `x: [B·T, D]` (already normalized).
    /// Returns the projected output `[B·T, D]` and attention weights
    /// `[B·heads, T, T]`.
    pub fn attention(&self, block: &BlockParams, x: &Tensor, batch: usize) -> Result<(Tensor, Tensor)> {
        let cfg = &self.config;
        let (d, heads, dh) = (cfg.hidden_dim, cfg.heads, cfg.head_dim());
        let t = x.shape()[0] / batch;
        let split = |y: Tensor| -> Result<Tensor> {
            y.reshape(&[batch, t, heads, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[batch * heads, t, dh])
        };
        let q = split(block.query.forward(x)?)?;
        let k = split(block.key.forward(x)?)?;
        let v = split(block.value.forward(x)?)?;
        let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (dh as f64).sqrt());
        let weights = scores.softmax(2)?;
        let context =
            weights.matmul(&v)?.reshape(&[batch, heads, t, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[batch * t, d])?;
        Ok((block.out.forward(&context)?, weights))
    }

    /// One pre-norm encoder block over `z: [T, D]` or `[B, T, D]`.
    pub fn encoder_block(&self, block: &BlockParams, z: &Tensor) -> Result<Tensor> {
        self.encoder_block_inner(block, z, &mut ForwardMode::Eval)
    }

    fn encoder_block_inner(&self, block: &BlockParams, z: &Tensor, mode: &mut ForwardMode<'_>) -> Result<Tensor> {
        let d = self.config.hidden_dim;
        let shape = z.shape().to_vec();
        if shape.last() != Some(&d) || !(shape.len() == 2 || shape.len() == 3) {
            return Err(Error::Dimension(format!("encoder block expects [.., T, {d}], got {}", shape_str(&shape))));
        }
        let batch = if shape.len() == 3 { shape[0] } else { 1 };
        let x = z.reshape(&[z.numel() / d, d])?;

        let (attended, _) = self.attention(block, &block.norm1.forward(&x)?, batch)?;
        let x = attended.add(&x)?;

        let h = block.fc1.forward(&block.norm2.forward(&x)?)?.gelu();
        let h = dropout(&h, self.config.dropout, mode)?;
        let h = dropout(&block.fc2.forward(&h)?, self.config.dropout, mode)?;
        h.add(&x)?.reshape(&shape)
    }

    /// `images: [B, H, W, C]` to logits `[B, K]`.
    pub fn forward(&self, images: &Tensor, mode: &mut ForwardMode<'_>) -> Result<Tensor> {
        let cfg = &self.config;
        let (h, w) = cfg.image_size;
        match images.shape() {
            &[_, ih, iw, ic] if ih == h && iw == w && ic == cfg.channels => {}
            other => {
                return Err(Error::Config(format!(
                    "expected images [B, {h}, {w}, {}], got {}",
                    cfg.channels,
                    shape_str(other)
                )))
            }
        }
        let batch = images.shape()[0];
        let patches = patchify_batch(images, cfg.patch_size)?;
        let mut z = self.embed_inner(&patches, mode)?;
        for block in &self.params.blocks {
            z = self.encoder_block_inner(block, &z, mode)?;
        }
        let d = cfg.hidden_dim;
        let z = self.params.norm.forward(&z)?;
        let pooled = if cfg.use_class_token { z.narrow(1, 0, 1)?.reshape(&[batch, d])? } else { z.mean_axis(1)? };
        self.params.head.forward(&pooled)
    }
}
