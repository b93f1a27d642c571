//! Seeded image augmentation on `[H, W, C]` tensors with values in `[0, 1]`.
//!
//! Every enabled transform fires independently with `probability`, drawing
//! its magnitude from the caller's generator. Geometric transforms resample
//! bilinearly and fill pixels that map outside the frame with 0.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Intensity rescaling to `[0, 1]`. The loader always rescales, so at
    /// augmentation time this is a no-op kept for policy parity.
    pub rescale: bool,
    pub brightness: bool,
    pub rotation: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub shift: bool,
    pub zoom: bool,
    pub probability: f64,
    pub brightness_range: (f64, f64),
    pub rotation_degrees: f64,
    /// Maximum shift per axis as a fraction of that axis.
    pub shift_fraction: f64,
    pub zoom_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rescale: false,
            brightness: false,
            rotation: false,
            hflip: false,
            vflip: false,
            shift: false,
            zoom: false,
            probability: 0.5,
            brightness_range: (0.8, 1.2),
            rotation_degrees: 15.0,
            shift_fraction: 0.1,
            zoom_range: (0.9, 1.1),
        }
    }
}

impl AugmentPolicy {
    pub const NAMES: [&'static str; 4] = ["none", "chest-xray", "kvasir", "kvasir-capsule"];

    /// Per-dataset transform families.
    pub fn named(name: &str) -> Result<Self> {
        let base = AugmentPolicy::default();
        Ok(match name {
            "none" => base,
            "chest-xray" => AugmentPolicy { rescale: true, brightness: true, zoom: true, shift: true, ..base },
            "kvasir" => AugmentPolicy { brightness: true, rotation: true, vflip: true, ..base },
            "kvasir-capsule" => AugmentPolicy { rotation: true, vflip: true, hflip: true, shift: true, ..base },
            other => {
                return Err(Error::Config(format!(
                    "unknown augmentation policy {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn is_empty(&self) -> bool {
        !(self.brightness || self.rotation || self.hflip || self.vflip || self.shift || self.zoom)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("augmentation probability {} outside [0, 1]", self.probability)));
        }
        if !ordered(self.brightness_range) || !ordered(self.zoom_range) {
            return Err(Error::Config("brightness_range and zoom_range must be positive (lo, hi) pairs".into()));
        }
        if !(self.rotation_degrees >= 0.0) || !(0.0..1.0).contains(&self.shift_fraction) {
            return Err(Error::Config("rotation_degrees must be >= 0 and shift_fraction in [0, 1)".into()));
        }
        Ok(())
    }
}

fn dims(img: &Tensor) -> (usize, usize, usize) {
    match img.shape() {
        &[h, w, c] => (h, w, c),
        other => panic!("augmentation expects [H, W, C], got {other:?}"),
    }
}

/// Bilinear sample at fractional `(y, x)`; zero outside the frame.
fn sample(x: &[f64], h: usize, w: usize, c: usize, y: f64, xx: f64, ch: usize) -> f64 {
    const SLACK: f64 = 1e-9;
    if y < -SLACK || xx < -SLACK || y > (h - 1) as f64 + SLACK || xx > (w - 1) as f64 + SLACK {
        return 0.0;
    }
    let y = y.clamp(0.0, (h - 1) as f64);
    let xx = xx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, xx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, xx - x0 as f64);
    let at = |r: usize, col: usize| x[(r * w + col) * c + ch];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Builds an image where output `(y, x)` samples the input at `src(y, x)`.
fn remap(img: &Tensor, src: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let (h, w, c) = dims(img);
    let x = img.data();
    let mut out = Vec::with_capacity(x.len());
    for oy in 0..h {
        for ox in 0..w {
            let (sy, sx) = src(oy as f64, ox as f64);
            for ch in 0..c {
                out.push(sample(x, h, w, c, sy, sx, ch));
            }
        }
    }
    Tensor::raw(out, img.shape().to_vec())
}

/// Multiplies every value by `factor`, clamped to `[0, 1]`.
pub fn adjust_brightness(img: &Tensor, factor: f64) -> Tensor {
    let data = img.data().iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect();
    Tensor::raw(data, img.shape().to_vec())
}

pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let (h, w, c) = dims(img);
    let x = img.data();
    let mut out = Vec::with_capacity(x.len());
    for y in 0..h {
        for col in (0..w).rev() {
            out.extend_from_slice(&x[(y * w + col) * c..(y * w + col + 1) * c]);
        }
    }
    Tensor::raw(out, img.shape().to_vec())
}

pub fn flip_vertical(img: &Tensor) -> Tensor {
    let (h, w, c) = dims(img);
    let x = img.data();
    let mut out = Vec::with_capacity(x.len());
    for y in (0..h).rev() {
        out.extend_from_slice(&x[y * w * c..(y + 1) * w * c]);
    }
    Tensor::raw(out, img.shape().to_vec())
}

/// Counter-clockwise rotation about the image center.
pub fn rotate(img: &Tensor, degrees: f64) -> Tensor {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w, _) = dims(img);
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    remap(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
    })
}

/// Moves content by `(dy, dx)` pixels.
pub fn shift(img: &Tensor, dy: f64, dx: f64) -> Tensor {
    if dy == 0.0 && dx == 0.0 {
        return img.clone();
    }
    remap(img, |y, x| (y - dy, x - dx))
}

/// Scales content about the center; `factor > 1` zooms in.
pub fn zoom(img: &Tensor, factor: f64) -> Tensor {
    if factor == 1.0 {
        return img.clone();
    }
    let (h, w, _) = dims(img);
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    remap(img, |y, x| (cy + (y - cy) / factor, cx + (x - cx) / factor))
}

/// Applies `policy` to one `[H, W, C]` image.
pub fn augment(img: &Tensor, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = img.clone();
    let p = policy.probability;
    let fires = |rng: &mut ChaCha8Rng| rng.random::<f64>() < p;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo < hi { rng.random_range(lo..hi) } else { lo };

    if policy.brightness && fires(rng) {
        out = adjust_brightness(&out, uniform(rng, policy.brightness_range));
    }
    if policy.rotation && fires(rng) {
        let r = policy.rotation_degrees;
        out = rotate(&out, uniform(rng, (-r, r)));
    }
    if policy.zoom && fires(rng) {
        out = zoom(&out, uniform(rng, policy.zoom_range));
    }
    if policy.shift && fires(rng) {
        let (h, w, _) = dims(&out);
        let f = policy.shift_fraction;
        let dy = uniform(rng, (-f, f)) * h as f64;
        let dx = uniform(rng, (-f, f)) * w as f64;
        out = shift(&out, dy, dx);
    }
    if policy.hflip && fires(rng) {
        out = flip_horizontal(&out);
    }
    if policy.vflip && fires(rng) {
        out = flip_vertical(&out);
    }
    let data = out.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::raw(data, out.shape().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::raw((0..h * w * c).map(|_| rng.random::<f64>()).collect(), vec![h, w, c])
    }

    fn all_on() -> AugmentPolicy {
        AugmentPolicy {
            rescale: true,
            brightness: true,
            rotation: true,
            hflip: true,
            vflip: true,
            shift: true,
            zoom: true,
            ..Default::default()
        }
    }

    #[test]
    fn empty_policy_is_identity() {
        let img = random_image(1, 6, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&img, &AugmentPolicy::default(), &mut rng).data(), img.data());
    }

    #[test]
    fn flips_are_involutions() {
        let img = random_image(2, 4, 7, 2);
        assert_eq!(flip_vertical(&flip_vertical(&img)).data(), img.data());
        assert_eq!(flip_horizontal(&flip_horizontal(&img)).data(), img.data());
        assert_ne!(flip_vertical(&img).data(), img.data());
    }

    #[test]
    fn neutral_magnitudes_are_identities() {
        let img = random_image(3, 5, 5, 1);
        assert_eq!(rotate(&img, 0.0).data(), img.data());
        assert_eq!(shift(&img, 0.0, 0.0).data(), img.data());
        assert_eq!(zoom(&img, 1.0).data(), img.data());
    }

    #[test]
    fn brightness_on_constant_image() {
        let img = Tensor::full(&[3, 3, 3], 0.5);
        let out = adjust_brightness(&img, 1.2);
        assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
        let clipped = adjust_brightness(&Tensor::full(&[1, 1, 1], 0.9), 1.2);
        assert_eq!(clipped.data(), &[1.0]);
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // 3x3 with a single lit pixel at the top-middle; +90° (counter-clockwise)
        // moves it to the middle-left.
        let mut data = vec![0.0; 9];
        data[1] = 1.0;
        let img = Tensor::raw(data, vec![3, 3, 1]);
        let r = rotate(&img, 90.0);
        assert!((r.data()[3] - 1.0).abs() < 1e-9, "{:?}", r.data());
        assert!(r.data().iter().map(|v| v.abs()).sum::<f64>() < 1.0 + 1e-9);
    }

    #[test]
    fn shift_fills_with_zero() {
        let img = Tensor::full(&[4, 4, 1], 1.0);
        let s = shift(&img, 1.0, 0.0);
        assert!(s.data()[..4].iter().all(|&v| v == 0.0));
        assert!(s.data()[4..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn seeded_augment_is_deterministic() {
        let img = random_image(4, 8, 8, 3);
        let a = augment(&img, &all_on(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&img, &all_on(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn named_policies() {
        assert!(AugmentPolicy::named("none").unwrap().is_empty());
        let k = AugmentPolicy::named("kvasir").unwrap();
        assert!(k.brightness && k.rotation && k.vflip && !k.hflip);
        assert!(AugmentPolicy::named("imagenet").is_err());
        for n in AugmentPolicy::NAMES {
            AugmentPolicy::named(n).unwrap().validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn augment_preserves_shape_and_range(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, c in 1usize..4) {
            let img = random_image(seed, h, w, c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
            let out = augment(&img, &AugmentPolicy { probability: 1.0, ..all_on() }, &mut rng);
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
