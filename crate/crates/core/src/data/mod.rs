//! Manifest-driven image ingestion, augmentation, batching and toy data.

mod augment;
mod dataset;
mod image;
mod manifest;
mod synth;

pub use self::augment::{
    adjust_brightness, augment, flip_horizontal, flip_vertical, rotate, shift, zoom, AugmentPolicy,
};
pub use self::dataset::{batches, Batch, BatchIter, Dataset, Sample};
pub use self::image::{decode_image, load_sample_pixels, resize, to_channels, write_ppm};
pub use self::manifest::{load_manifest, parse_manifest, DatasetManifest, Record, Split, SplitCounts};
pub use self::synth::{render_pattern, synthesize_toy_dataset, SynthSpec, MANIFEST_NAME};

use crate::error::{Error, Result};

/// Published train/valid/test sizes of the reference datasets.
pub const SPLIT_PRESETS: [(&str, SplitCounts); 3] = [
    ("chest-xray", SplitCounts { train: 5693, valid: 671, test: 771 }),
    ("kvasir", SplitCounts { train: 6400, valid: 800, test: 800 }),
    ("kvasir-capsule", SplitCounts { train: 19280, valid: 4820, test: 23061 }),
];

pub fn split_preset(name: &str) -> Result<SplitCounts> {
    SPLIT_PRESETS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c).ok_or_else(|| {
        let names: Vec<&str> = SPLIT_PRESETS.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("unknown split preset {name:?}; expected one of {}", names.join(", ")))
    })
}

/// Per-split `actual - expected`; empty when everything matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDiff {
    pub actual: SplitCounts,
    pub expected: SplitCounts,
}

impl SplitDiff {
    pub fn new(actual: SplitCounts, expected: SplitCounts) -> Self {
        SplitDiff { actual, expected }
    }

    pub fn is_match(&self) -> bool {
        self.actual == self.expected
    }

    /// Lines like `test: 799 (expected 800, -1)` for each mismatched split.
    pub fn lines(&self) -> Vec<String> {
        Split::ALL
            .iter()
            .filter_map(|&s| {
                let (a, e) = (self.actual.get(s) as i64, self.expected.get(s) as i64);
                (a != e).then(|| format!("{s}: {a} (expected {e}, {:+})", a - e))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_sizes() {
        assert_eq!(split_preset("kvasir").unwrap(), SplitCounts { train: 6400, valid: 800, test: 800 });
        assert_eq!(split_preset("chest-xray").unwrap(), SplitCounts { train: 5693, valid: 671, test: 771 });
        assert_eq!(split_preset("kvasir-capsule").unwrap(), SplitCounts { train: 19280, valid: 4820, test: 23061 });
        assert!(split_preset("imagenet").is_err());
    }

    #[test]
    fn diff_lines() {
        let expected = split_preset("kvasir").unwrap();
        let diff = SplitDiff::new(SplitCounts { test: 799, ..expected }, expected);
        assert!(!diff.is_match());
        assert_eq!(diff.lines(), vec!["test: 799 (expected 800, -1)"]);
        assert!(SplitDiff::new(expected, expected).lines().is_empty());
    }
}
