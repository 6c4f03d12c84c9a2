//! Data handling for U-KAN runs: manifests with a seeded train/val split,
//! 8-bit PNG/PGM loading with resizing, paired image/mask augmentation,
//! deterministic batching and the synthetic datasets used by the fixtures.
//!
//! On-disk layout: `<root>/images/<stem>.png|.pgm` with masks at
//! `<root>/masks/<stem>.png|.pgm`.

pub mod augment;
pub mod error;
pub mod io;
pub mod loader;
pub mod manifest;
pub mod synthetic;

pub use augment::{augment, AugmentConfig, Rotation, Transform};
pub use error::{DataError, Result};
pub use io::{load_and_resize, load_image, load_mask, resize_bilinear, resize_nearest, save_png, LoadOptions};
pub use loader::{batch_order, epoch_rng, Batch, Dataset};
pub use manifest::{build_manifest, DatasetManifest, ManifestRow, Split};
pub use synthetic::{blobs, two_mode, two_mode_centers, write_dataset};

/// An image `(C, H, W)` with values in `[0, 1]` and an optional `(1, H, W)`
/// mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord<T> {
    pub id: String,
    pub image: ukan_core::Tensor<T>,
    pub mask: Option<ukan_core::Tensor<T>>,
}

pub type Sample32 = SampleRecord<f32>;
pub type Sample64 = SampleRecord<f64>;
