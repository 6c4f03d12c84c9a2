use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ukan_core::{Scalar, Tensor};

use crate::augment::{augment, AugmentConfig};
use crate::error::{DataError, Result};
use crate::io::{load_and_resize, LoadOptions};
use crate::manifest::{DatasetManifest, Split};
use crate::SampleRecord;

/// Stacked samples: images `(B, C, H, W)`, masks `(B, 1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub ids: Vec<String>,
    pub images: Tensor<T>,
    pub masks: Option<Tensor<T>>,
}

/// In-memory samples of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<SampleRecord<T>>,
}

/// Generator for epoch `epoch` of a run seeded with `seed`; `purpose`
/// (below 4) picks an independent stream: 0 = batch order, 1 = augmentation,
/// 2 and 3 are free for the caller.
pub fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    debug_assert!(purpose < 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 * 4 + purpose);
    rng
}

/// Index batches for one epoch. The order depends only on `(seed, epoch)`.
/// With `drop_singleton`, a trailing batch of one sample is dropped when
/// other batches exist.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: usize, shuffle: bool, drop_singleton: bool) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        idx.shuffle(&mut epoch_rng(seed, epoch, 0));
    }
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if drop_singleton && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
    }
    out
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<SampleRecord<T>>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let shape = first.image.shape();
            let masked = first.mask.is_some();
            for s in &samples {
                if s.image.shape() != shape || s.mask.is_some() != masked {
                    return Err(DataError::Config(format!(
                        "sample {:?} has image {:?} (expected {shape:?}) or inconsistent mask presence",
                        s.id,
                        s.image.shape()
                    )));
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn from_manifest(manifest: &DatasetManifest, split: Split, opts: &LoadOptions) -> Result<Self> {
        let samples = manifest
            .split(split)
            .map(|row| load_and_resize(row, opts))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(C, H, W)` of every image.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn has_masks(&self) -> bool {
        self.samples.first().is_some_and(|s| s.mask.is_some())
    }

    /// Stacks the samples at `indices`, augmenting each one in order when
    /// `augmentation` is given.
    pub fn batch(&self, indices: &[usize], augmentation: Option<(&AugmentConfig, &mut ChaCha8Rng)>) -> Result<Batch<T>> {
        let picked: Vec<SampleRecord<T>> = match augmentation {
            Some((cfg, rng)) => indices.iter().map(|&i| augment(&self.samples[i], cfg, rng)).collect(),
            None => indices.iter().map(|&i| self.samples[i].clone()).collect(),
        };
        let images = Tensor::stack(&picked.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let masks = if self.has_masks() {
            let ms: Vec<Tensor<T>> = picked.iter().filter_map(|s| s.mask.clone()).collect();
            Some(Tensor::stack(&ms)?)
        } else {
            None
        };
        Ok(Batch { ids: picked.into_iter().map(|s| s.id).collect(), images, masks })
    }
}
