//! Deterministic toy datasets of oriented stripe patterns.
//!
//! Class `k` of `K` is a sinusoidal grating at angle `π·k/K` with random
//! period, phase, tint and pixel noise, so classes differ only in
//! orientation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::write_ppm;
use super::manifest::{DatasetManifest, Record, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Square image side in pixels.
    pub resolution: usize,
    pub seed: u64,
    /// Per-class count multipliers; class `k` gets `per_class · imbalance[k]`.
    #[serde(default)]
    pub imbalance: Option<Vec<usize>>,
    #[serde(default = "default_fraction")]
    pub valid_fraction: f64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
}

fn default_fraction() -> f64 {
    0.2
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, resolution: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            per_class,
            resolution,
            seed,
            imbalance: None,
            valid_fraction: default_fraction(),
            test_fraction: default_fraction(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        match &self.imbalance {
            Some(m) => m.iter().map(|r| r * self.per_class).collect(),
            None => vec![self.per_class; self.classes],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class == 0 || self.resolution < 2 {
            return Err(Error::Config("synth needs >= 2 classes, per_class >= 1 and resolution >= 2".into()));
        }
        if let Some(m) = &self.imbalance {
            if m.len() != self.classes || m.contains(&0) {
                return Err(Error::Config(format!("imbalance needs {} positive multipliers, got {m:?}", self.classes)));
            }
        }
        let (v, t) = (self.valid_fraction, self.test_fraction);
        if !(0.0..1.0).contains(&v) || !(0.0..1.0).contains(&t) || v + t >= 1.0 {
            return Err(Error::Config("valid_fraction + test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Renders one `[R, R, 3]` image with values in `[0, 255]`.
pub fn render_pattern(class: usize, classes: usize, resolution: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let theta = PI * class as f64 / classes as f64;
    let (sin, cos) = theta.sin_cos();
    let r = resolution as f64;
    let period = rng.random_range((r / 6.0).max(3.0)..(r / 3.0).max(4.0));
    let phase = rng.random_range(0.0..2.0 * PI);
    let tint: [f64; 3] = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let mut data = Vec::with_capacity(resolution * resolution * 3);
    for y in 0..resolution {
        for x in 0..resolution {
            let wave = (2.0 * PI * (x as f64 * cos + y as f64 * sin) / period + phase).sin();
            for t in tint {
                let v = (0.5 + 0.35 * wave) * t + noise.sample(rng);
                data.push((v.clamp(0.0, 1.0) * 255.0).round());
            }
        }
    }
    Tensor::raw(data, vec![resolution, resolution, 3])
}

/// Writes images under `dir/images/` and `dir/manifest.csv`; returns the
/// manifest path and parsed manifest.
pub fn synthesize_toy_dataset(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, DatasetManifest)> {
    spec.validate()?;
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    for (class, &count) in spec.class_counts().iter().enumerate() {
        let n_test = split_size(count, spec.test_fraction);
        let n_valid = split_size(count, spec.valid_fraction).min(count.saturating_sub(n_test + 1));
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        let mut splits = vec![Split::Train; count];
        for &i in &order[..n_test] {
            splits[i] = Split::Test;
        }
        for &i in &order[n_test..n_test + n_valid] {
            splits[i] = Split::Valid;
        }
        for (i, split) in splits.into_iter().enumerate() {
            let rel = format!("images/c{class}_{i:05}.ppm");
            write_ppm(&dir.join(&rel), &render_pattern(class, spec.classes, spec.resolution, &mut rng))?;
            records.push(Record { path: rel, class, split });
        }
    }
    let manifest = DatasetManifest {
        classes: (0..spec.classes).map(|k| format!("pattern{k}")).collect(),
        records,
        root: dir.to_path_buf(),
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok((path, manifest))
}

/// At least one test sample whenever the class has two or more images.
fn split_size(count: usize, fraction: f64) -> usize {
    if fraction == 0.0 || count < 2 {
        return 0;
    }
    ((count as f64 * fraction).round() as usize).clamp(1, count - 1)
}
