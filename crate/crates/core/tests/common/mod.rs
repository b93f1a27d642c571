#![allow(dead_code)]

use std::path::{Path, PathBuf};

use vitlab::data::{synthesize_toy_dataset, DatasetManifest, SynthSpec};
use vitlab::harness::{parse_config, ExperimentConfig, Overrides};
use vitlab::models::ViTConfig;

pub fn vit(image: usize, patch: usize, dim: usize, depth: usize, heads: usize, classes: usize) -> ViTConfig {
    ViTConfig {
        image_size: (image, image),
        channels: 3,
        patch_size: patch,
        hidden_dim: dim,
        depth,
        heads,
        mlp_dim: 2 * dim,
        num_classes: classes,
        dropout: 0.0,
        use_class_token: true,
    }
}

pub fn toy(dir: &Path, classes: usize, per_class: usize, resolution: usize, seed: u64) -> (PathBuf, DatasetManifest) {
    synthesize_toy_dataset(&SynthSpec::new(classes, per_class, resolution, seed), dir).expect("toy dataset")
}

/// A small ViT experiment on `manifest` with dotted-key overrides.
pub fn experiment(manifest: &Path, out: &Path, resolution: usize, set: &[(&str, &str)]) -> ExperimentConfig {
    let text = format!(
        r#"
seed = 7
output = "{out}"

[dataset]
manifest = "{manifest}"
resolution = {resolution}

[model]
name = "vit-toy"
patch_size = 4
hidden_dim = 16
depth = 2
heads = 2
mlp_dim = 32
dropout = 0.0

[train]
epochs = 3
learning_rate = 1e-3
batch_size = 8

[eval]
bootstrap_resamples = 200
"#,
        out = out.display(),
        manifest = manifest.display(),
    );
    let overrides =
        Overrides { dotted: set.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(), ..Overrides::default() };
    parse_config(&text, Path::new("experiment.toml"), &overrides).expect("experiment config")
}
