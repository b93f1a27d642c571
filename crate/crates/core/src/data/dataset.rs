use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentPolicy};
use super::image::load_sample_pixels;
use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One decoded image, `[H, W, C]` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pixels: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, H, W, C]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Positions of the samples within their split, in manifest order.
    pub indices: Vec<usize>,
}

/// All samples of one split, decoded and resized, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub paths: Vec<String>,
    pub resolution: (usize, usize),
    pub channels: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest, split: Split, resolution: (usize, usize), channels: usize) -> Result<Self> {
        let mut samples = Vec::new();
        let mut paths = Vec::new();
        for record in manifest.records_in(split) {
            let pixels = load_sample_pixels(&manifest.resolve(record), resolution, channels)?;
            samples.push(Sample { pixels, label: record.class });
            paths.push(record.path.clone());
        }
        if samples.is_empty() {
            return Err(Error::Data(format!("split {split} has no records")));
        }
        Ok(Dataset { split, samples, paths, resolution, channels, num_classes: manifest.num_classes() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }

    /// Stacks the given samples into a batch, unaugmented.
    pub fn stack(&self, indices: &[usize]) -> Result<Batch> {
        self.stack_with(indices, |_, px| px.clone())
    }

    fn stack_with(&self, indices: &[usize], mut f: impl FnMut(usize, &Tensor) -> Tensor) -> Result<Batch> {
        let (h, w) = self.resolution;
        let mut data = Vec::with_capacity(indices.len() * h * w * self.channels);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            data.extend_from_slice(f(i, &s.pixels).data());
            labels.push(s.label);
        }
        let images = Tensor::from_vec(data, &[indices.len(), h, w, self.channels])?;
        Ok(Batch { images, labels, indices: indices.to_vec() })
    }

    /// Batches for one epoch. The training split is shuffled and augmented
    /// with draws from `rng`; other splits come out in manifest order,
    /// unaugmented, and leave `rng` untouched. The last batch may be short.
    pub fn batches<'a>(
        &'a self,
        batch_size: usize,
        policy: &'a AugmentPolicy,
        rng: &'a mut ChaCha8Rng,
    ) -> Result<BatchIter<'a>> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let train = self.split == Split::Train;
        if train {
            order.shuffle(rng);
        }
        Ok(BatchIter { dataset: self, order, batch_size, pos: 0, policy: train.then_some(policy), rng })
    }

    /// Manifest-order batches without shuffling or augmentation.
    pub fn ordered_batches(&self, batch_size: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let order: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |idx| self.stack(&idx))
    }
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    policy: Option<&'a AugmentPolicy>,
    rng: &'a mut ChaCha8Rng,
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        let batch = match self.policy {
            Some(policy) if !policy.is_empty() => {
                let rng = &mut *self.rng;
                self.dataset.stack_with(&idx, |_, px| augment(px, policy, rng))
            }
            _ => self.dataset.stack(&idx),
        };
        Some(batch)
    }
}

/// Loads `split` of `manifest` and returns one epoch of batches.
pub fn batches(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
    resolution: (usize, usize),
    channels: usize,
) -> Result<Vec<Batch>> {
    let dataset = Dataset::load(manifest, split, resolution, channels)?;
    dataset.batches(batch_size, policy, rng)?.collect()
}
