use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ukan_core::{Scalar, Tensor};

use crate::error::{DataError, Result};
use crate::io::save_png;
use crate::SampleRecord;

fn id(i: usize) -> String {
    format!("{i:04}")
}

/// `n` RGB images of 1 to 3 bright ellipses on a darker textured background;
/// the mask marks the ellipses. Never produces an empty mask.
pub fn blobs<T: Scalar>(n: usize, size: usize, seed: u64) -> Vec<SampleRecord<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=3);
            let shapes: Vec<[f64; 4]> = (0..k)
                .map(|_| {
                    [
                        rng.random_range(0.2 * s..0.8 * s),
                        rng.random_range(0.2 * s..0.8 * s),
                        rng.random_range(s / 10.0..s / 4.0),
                        rng.random_range(s / 10.0..s / 4.0),
                    ]
                })
                .collect();
            let fg: [f64; 3] = [rng.random_range(0.6..0.9), rng.random_range(0.5..0.9), rng.random_range(0.4..0.8)];
            let bg: [f64; 3] = [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)];
            let plane = size * size;
            let mut mask = vec![T::zero(); plane];
            for (p, m) in mask.iter_mut().enumerate() {
                let (y, x) = ((p / size) as f64 + 0.5, (p % size) as f64 + 0.5);
                if shapes.iter().any(|e| ((y - e[0]) / e[2]).powi(2) + ((x - e[1]) / e[3]).powi(2) <= 1.0) {
                    *m = T::one();
                }
            }
            if mask.iter().all(|&m| m == T::zero()) {
                let e = shapes[0];
                mask[(e[0] as usize).min(size - 1) * size + (e[1] as usize).min(size - 1)] = T::one();
            }
            let mut image = Vec::with_capacity(3 * plane);
            for c in 0..3 {
                for m in &mask {
                    let base = if *m == T::one() { fg[c] } else { bg[c] };
                    image.push(T::lit((base + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0)));
                }
            }
            SampleRecord {
                id: id(i),
                image: Tensor::new(vec![3, size, size], image).expect("sized above"),
                mask: Some(Tensor::new(vec![1, size, size], mask).expect("sized above")),
            }
        })
        .collect()
}

/// The two grayscale prototypes of [`two_mode`] in `[0, 1]`: bright top half,
/// and bright left half.
pub fn two_mode_centers<T: Scalar>(size: usize) -> [Tensor<T>; 2] {
    let (hi, lo) = (T::lit(0.9), T::lit(0.1));
    let half = size / 2;
    [
        Tensor::from_fn(vec![1, size, size], |p| if p / size < half { hi } else { lo }),
        Tensor::from_fn(vec![1, size, size], |p| if p % size < half { hi } else { lo }),
    ]
}

/// `n` grayscale images, each a copy of a randomly chosen prototype with
/// uniform jitter of +-0.05. No masks.
pub fn two_mode<T: Scalar>(n: usize, size: usize, seed: u64) -> Vec<SampleRecord<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = two_mode_centers::<T>(size);
    (0..n)
        .map(|i| {
            let c = &centers[rng.random_range(0..2)];
            let image = Tensor::from_fn(c.shape().to_vec(), |p| {
                T::lit((c.data()[p].to_f64().unwrap_or(0.0) + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
            });
            SampleRecord { id: id(i), image, mask: None }
        })
        .collect()
}

/// Writes samples as `<root>/images/<id>.png` and, when present,
/// `<root>/masks/<id>.png` (0 / 255).
pub fn write_dataset<T: Scalar>(root: &Path, samples: &[SampleRecord<T>]) -> Result<()> {
    let images = root.join("images");
    fs::create_dir_all(&images).map_err(|e| DataError::io(&images, e))?;
    let masked = samples.iter().any(|s| s.mask.is_some());
    let masks = root.join("masks");
    if masked {
        fs::create_dir_all(&masks).map_err(|e| DataError::io(&masks, e))?;
    }
    for s in samples {
        save_png(&images.join(format!("{}.png", s.id)), &s.image)?;
        if let Some(m) = &s.mask {
            save_png(&masks.join(format!("{}.png", s.id)), m)?;
        }
    }
    Ok(())
}
