//! Small convolutional baseline: three `conv3x3(stride 2) → LayerNorm over
//! channels → GELU` stages, global average pooling and a linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ForwardMode, Linear, Norm};
use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;
const STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub image_size: (usize, usize),
    pub channels: usize,
    pub num_classes: usize,
    /// Channels of the first stage; doubled at each later stage.
    #[serde(default = "default_width")]
    pub width: usize,
}

fn default_width() -> usize {
    16
}

impl CnnConfig {
    pub fn new(image_size: (usize, usize), channels: usize, num_classes: usize) -> Self {
        CnnConfig { image_size, channels, num_classes, width: default_width() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size.0 == 0 || self.image_size.1 == 0 || self.channels == 0 || self.width == 0 {
            return Err(Error::Config("cnn image size, channels and width must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        Ok(())
    }

    fn stage_channels(&self) -> Vec<(usize, usize)> {
        let mut c_in = self.channels;
        (0..STAGES)
            .map(|s| {
                let c_out = self.width << s;
                let pair = (c_in, c_out);
                c_in = c_out;
                pair
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let convs: usize = self.stage_channels().iter().map(|&(ci, co)| KERNEL * KERNEL * ci * co + co + 2 * co).sum();
        let last = self.width << (STAGES - 1);
        convs + last * self.num_classes + self.num_classes
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Linear,
    norm: Norm,
}

#[derive(Clone, Debug)]
pub struct Cnn {
    pub config: CnnConfig,
    stages: Vec<Stage>,
    head: Linear,
}

fn out_size(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Unfolds `x: [B, H, W, C]` into `[B·Ho·Wo, k·k·C]` rows (zero padding).
fn im2col(x: &Tensor) -> Result<(Tensor, usize, usize)> {
    let &[b, h, w, c] = x.shape() else {
        return Err(Error::Dimension(format!("im2col expects [B, H, W, C], got {}", shape_str(x.shape()))));
    };
    let (ho, wo) = (out_size(h), out_size(w));
    let cols = KERNEL * KERNEL * c;
    let mut gather = Vec::with_capacity(b * ho * wo * cols);
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            gather.push(inside.then(|| ((n * h + iy as usize) * w + ix as usize) * c + ch));
                        }
                    }
                }
            }
        }
    }
    Ok((x.gather_scatter(gather, vec![b * ho * wo, cols]), ho, wo))
}

impl Cnn {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = config
            .stage_channels()
            .into_iter()
            .map(|(ci, co)| Stage { conv: Linear::init(&mut rng, KERNEL * KERNEL * ci, co), norm: Norm::init(co) })
            .collect();
        let head = Linear::init(&mut rng, config.width << (STAGES - 1), config.num_classes);
        Ok(Cnn { config, stages, head })
    }

    pub fn forward(&self, images: &Tensor, _mode: &mut ForwardMode<'_>) -> Result<Tensor> {
        let (h, w) = self.config.image_size;
        let b = match images.shape() {
            &[b, ih, iw, ic] if ih == h && iw == w && ic == self.config.channels => b,
            other => {
                return Err(Error::Config(format!(
                    "expected images [B, {h}, {w}, {}], got {}",
                    self.config.channels,
                    shape_str(other)
                )))
            }
        };
        let mut x = images.clone();
        for stage in &self.stages {
            let (cols, ho, wo) = im2col(&x)?;
            let c_out = stage.conv.bias.numel();
            x = stage.norm.forward(&stage.conv.forward(&cols)?)?.gelu().reshape(&[b, ho, wo, c_out])?;
        }
        let c = x.shape()[3];
        let pooled = x.reshape(&[b, x.shape()[1] * x.shape()[2], c])?.mean_axis(1)?;
        self.head.forward(&pooled)
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.conv.slots().into_iter().cloned());
            out.extend(s.norm.slots().into_iter().cloned());
        }
        out.extend(self.head.slots().into_iter().cloned());
        out
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let mut slots: Vec<&mut Tensor> = Vec::new();
        for s in &mut self.stages {
            slots.extend(s.conv.slots_mut());
            slots.extend(s.norm.slots_mut());
        }
        slots.extend(self.head.slots_mut());
        if slots.len() != tensors.len() {
            return Err(Error::Contract(format!("expected {} tensors, got {}", slots.len(), tensors.len())));
        }
        if let Some((s, t)) = slots.iter().zip(&tensors).find(|(s, t)| s.shape() != t.shape()) {
            return Err(Error::Dimension(format!(
                "parameter shape {} replaced by {}",
                shape_str(s.shape()),
                shape_str(t.shape())
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            *slot = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    #[test]
    fn output_shape_and_count() {
        let cfg = CnnConfig::new((12, 10), 3, 4);
        let cnn = Cnn::new(cfg.clone(), 0).unwrap();
        let logits = cnn.forward(&Tensor::ones(&[2, 12, 10, 3]), &mut ForwardMode::Eval).unwrap();
        assert_eq!(logits.shape(), &[2, 4]);
        let n: usize = cnn.tensors().iter().map(|t| t.numel()).sum();
        assert_eq!(n, cfg.param_count());
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        let cfg = CnnConfig::new((8, 8), 1, 2);
        let a = Cnn::new(cfg.clone(), 42).unwrap();
        let b = Cnn::new(cfg, 42).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn im2col_center_tap() {
        // 1x3x3x1 image; output 2x2; the kernel center of output (0,0) is pixel (0,0)
        let x = Tensor::from_vec((1..=9).map(|v| v as f64).collect(), &[1, 3, 3, 1]).unwrap();
        let (cols, ho, wo) = im2col(&x).unwrap();
        assert_eq!((ho, wo), (2, 2));
        assert_eq!(cols.shape(), &[4, 9]);
        assert_eq!(&cols.data()[..9], &[0., 0., 0., 0., 1., 2., 0., 4., 5.]);
    }

    #[test]
    fn gradient_through_convolutions() {
        let cfg = CnnConfig { width: 2, ..CnnConfig::new((5, 5), 2, 3) };
        let cnn = Cnn::new(cfg, 3).unwrap();
        let x: Vec<f64> = (0..50).map(|i| ((i * 7) as f64 * 0.31).sin()).collect();
        let x = Tensor::from_vec(x, &[1, 5, 5, 2]).unwrap();
        let probe = Tensor::from_vec(vec![0.3, -1.0, 0.7], &[1, 3]).unwrap();
        let err = finite_difference_check(|x| Ok(cnn.forward(x, &mut ForwardMode::Eval)?.mul(&probe)?.sum()), &x, 1e-6)
            .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
