use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, Split};
use crate::error::{Error, Result};
use crate::models::{preset, CnnConfig, ModelConfig, Precision, ViTConfig};
use crate::training::TrainConfig;

pub const CNN_BASELINE: &str = "cnn-baseline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/experiment")
}

/// A square side or `[height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Square(usize),
    Rect([usize; 2]),
}

impl Resolution {
    pub fn dims(self) -> (usize, usize) {
        match self {
            Resolution::Square(s) => (s, s),
            Resolution::Rect([h, w]) => (h, w),
        }
    }
}

/// A named policy or an inline table of transform switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AugmentSpec {
    Named(String),
    Custom(AugmentPolicy),
}

impl AugmentSpec {
    pub fn policy(&self) -> Result<AugmentPolicy> {
        let policy = match self {
            AugmentSpec::Named(n) => AugmentPolicy::named(n)?,
            AugmentSpec::Custom(p) => p.clone(),
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    pub resolution: Resolution,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_augmentation")]
    pub augmentation: AugmentSpec,
}

fn default_channels() -> usize {
    3
}

fn default_augmentation() -> AugmentSpec {
    AugmentSpec::Named("none".into())
}

/// A preset name (`ViT-B/16`, `ViT-L/16`, `ViT-L/32`, `cnn-baseline`) with
/// optional field overrides, or a fully explicit ViT.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub patch_size: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub use_class_token: Option<bool>,
    /// First-stage width of the CNN baseline.
    pub width: Option<usize>,
    pub precision: Option<Precision>,
}

impl ModelSection {
    pub fn display_name(&self) -> String {
        self.name.clone().or_else(|| self.preset.clone()).unwrap_or_else(|| "vit".into())
    }

    pub fn precision(&self) -> Precision {
        self.precision.unwrap_or(Precision::F64)
    }

    pub fn resolve(&self, image_size: (usize, usize), channels: usize, num_classes: usize) -> Result<ModelConfig> {
        let config = match self.preset.as_deref() {
            Some(CNN_BASELINE) => {
                let vit_only = [self.patch_size, self.hidden_dim, self.depth, self.heads, self.mlp_dim];
                if vit_only.iter().any(Option::is_some) || self.dropout.is_some() || self.use_class_token.is_some() {
                    return Err(Error::Config("cnn-baseline takes no ViT fields".into()));
                }
                let mut c = CnnConfig::new(image_size, channels, num_classes);
                if let Some(w) = self.width {
                    c.width = w;
                }
                ModelConfig::Cnn(c)
            }
            Some(name) => {
                let mut c = preset(name, image_size.0.max(1), num_classes)?;
                c.image_size = image_size;
                c.channels = channels;
                ModelConfig::Vit(self.apply_overrides(c)?)
            }
            None => {
                let need = |v: Option<usize>, field: &str| {
                    v.ok_or_else(|| Error::Config(format!("model.{field} is required without a preset")))
                };
                let c = ViTConfig {
                    image_size,
                    channels,
                    patch_size: need(self.patch_size, "patch_size")?,
                    hidden_dim: need(self.hidden_dim, "hidden_dim")?,
                    depth: need(self.depth, "depth")?,
                    heads: need(self.heads, "heads")?,
                    mlp_dim: need(self.mlp_dim, "mlp_dim")?,
                    num_classes,
                    dropout: self.dropout.unwrap_or(0.1),
                    use_class_token: self.use_class_token.unwrap_or(true),
                };
                ModelConfig::Vit(self.apply_overrides(c)?)
            }
        };
        config.validate()?;
        Ok(config)
    }

    fn apply_overrides(&self, mut c: ViTConfig) -> Result<ViTConfig> {
        if self.width.is_some() {
            return Err(Error::Config("model.width applies only to cnn-baseline".into()));
        }
        c.patch_size = self.patch_size.unwrap_or(c.patch_size);
        c.hidden_dim = self.hidden_dim.unwrap_or(c.hidden_dim);
        c.depth = self.depth.unwrap_or(c.depth);
        c.heads = self.heads.unwrap_or(c.heads);
        c.mlp_dim = self.mlp_dim.unwrap_or(c.mlp_dim);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.use_class_token = self.use_class_token.unwrap_or(c.use_class_token);
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Split,
    pub batch_size: usize,
    pub bootstrap_resamples: usize,
    pub fps_batch: usize,
    pub fps_warmup: usize,
    pub fps_iters: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            batch_size: 32,
            bootstrap_resamples: 1000,
            fps_batch: 8,
            fps_warmup: 2,
            fps_iters: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.dataset.resolution.dims();
        if h == 0 || w == 0 || self.dataset.channels == 0 {
            return Err(Error::Config("dataset.resolution and dataset.channels must be positive".into()));
        }
        self.dataset.augmentation.policy()?;
        self.train.validate()?;
        let e = &self.eval;
        if e.batch_size == 0 || e.fps_batch == 0 || e.fps_iters == 0 {
            return Err(Error::Config("eval batch sizes and fps_iters must be positive".into()));
        }
        if e.bootstrap_resamples < 2 {
            return Err(Error::Config("eval.bootstrap_resamples must be at least 2".into()));
        }
        Ok(())
    }
}

/// Global command-line settings layered over a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub precision: Option<Precision>,
    /// `(dotted.key, raw value)` pairs; values parse as TOML, falling back
    /// to a bare string.
    pub dotted: Vec<(String, String)>,
}

pub fn parse_config(text: &str, origin: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
    for (key, raw) in &overrides.dotted {
        set_dotted(&mut table, key, parse_value(raw))?;
    }
    let mut config: ExperimentConfig =
        table.try_into().map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.output = out.clone();
    }
    if let Some(p) = overrides.precision {
        config.model.precision = Some(p);
    }
    if config.dataset.manifest.is_relative() {
        if let Some(dir) = origin.parent() {
            config.dataset.manifest = dir.join(&config.dataset.manifest);
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
        _ => Error::io(path, e),
    })?;
    parse_config(&text, path, overrides)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in parents {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::LossKind;

    const BASE: &str = r#"
seed = 4
output = "runs/x"

[dataset]
manifest = "data/manifest.csv"
resolution = 32
augmentation = "kvasir"

[model]
patch_size = 8
hidden_dim = 16
depth = 2
heads = 2
mlp_dim = 32

[train]
epochs = 3
"#;

    fn parse(overrides: &Overrides) -> Result<ExperimentConfig> {
        parse_config(BASE, Path::new("/cfg/exp.toml"), overrides)
    }

    #[test]
    fn defaults_and_relative_manifest() {
        let c = parse(&Overrides::default()).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.dataset.manifest, PathBuf::from("/cfg/data/manifest.csv"));
        assert_eq!(c.dataset.resolution.dims(), (32, 32));
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.eval, EvalSection::default());
        assert_eq!(c.model.precision(), Precision::F64);
    }

    #[test]
    fn dotted_and_global_overrides() {
        let o = Overrides {
            seed: Some(9),
            out: Some("elsewhere".into()),
            precision: Some(Precision::F32),
            dotted: vec![
                ("train.learning_rate".into(), "0.01".into()),
                ("train.loss".into(), "focal".into()),
                ("dataset.resolution".into(), "[16, 24]".into()),
                ("eval.split".into(), "valid".into()),
            ],
        };
        let c = parse(&o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.output, PathBuf::from("elsewhere"));
        assert_eq!(c.model.precision(), Precision::F32);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.loss, LossKind::Focal);
        assert_eq!(c.dataset.resolution.dims(), (16, 24));
        assert_eq!(c.eval.split, Split::Valid);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let unknown = Overrides { dotted: vec![("train.learning_rat".into(), "1".into())], ..Default::default() };
        let err = parse(&unknown).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("learning_rat"), "{err}");
        let negative = Overrides { dotted: vec![("train.learning_rate".into(), "-1".into())], ..Default::default() };
        assert!(matches!(parse(&negative), Err(Error::Config(_))));
        let through_scalar = Overrides { dotted: vec![("seed.x".into(), "1".into())], ..Default::default() };
        assert!(matches!(parse(&through_scalar), Err(Error::Config(_))));
        assert!(matches!(parse_config("[[[", Path::new("x.toml"), &Overrides::default()), Err(Error::Config(_))));
        assert!(matches!(load_config(Path::new("/no/such.toml"), &Overrides::default()), Err(Error::Config(_))));
    }

    #[test]
    fn model_resolution() {
        let c = parse(&Overrides::default()).unwrap();
        let ModelConfig::Vit(v) = c.model.resolve((32, 32), 3, 4).unwrap() else { panic!() };
        assert_eq!((v.patch_size, v.num_classes, v.dropout), (8, 4, 0.1));
        assert!(c.model.resolve((30, 32), 3, 4).is_err());

        let b16 = ModelSection { preset: Some("ViT-B/16".into()), depth: Some(2), ..Default::default() };
        let ModelConfig::Vit(v) = b16.resolve((224, 224), 1, 2).unwrap() else { panic!() };
        assert_eq!((v.hidden_dim, v.depth, v.channels), (768, 2, 1));

        let cnn = ModelSection { preset: Some(CNN_BASELINE.into()), width: Some(4), ..Default::default() };
        assert!(matches!(cnn.resolve((16, 16), 3, 2).unwrap(), ModelConfig::Cnn(c) if c.width == 4));
        let mixed = ModelSection { preset: Some(CNN_BASELINE.into()), depth: Some(2), ..Default::default() };
        assert!(mixed.resolve((16, 16), 3, 2).is_err());
        assert!(ModelSection::default().resolve((16, 16), 3, 2).is_err());
    }

    #[test]
    fn inline_augmentation_table() {
        let text = BASE.replace("augmentation = \"kvasir\"", "augmentation = { hflip = true, probability = 1.0 }");
        let c = parse_config(&text, Path::new("x.toml"), &Overrides::default()).unwrap();
        let p = c.dataset.augmentation.policy().unwrap();
        assert!(p.hflip && !p.vflip);
    }
}
