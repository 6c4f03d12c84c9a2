use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use ukan_core::nn::bilinear_resize;
use ukan_core::{Scalar, Tensor};

use crate::error::{DataError, Result};
use crate::manifest::ManifestRow;
use crate::SampleRecord;

/// Target size and channel count for loaded images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub height: usize,
    pub width: usize,
    /// 1 (grayscale) or 3 (RGB; grayscale files are replicated).
    pub channels: usize,
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| DataError::Decode { path: path.to_path_buf(), source })
}

/// Decodes an 8-bit image into `(C, H, W)` with values `v / 255`.
pub fn load_image<T: Scalar>(path: &Path, channels: usize) -> Result<Tensor<T>> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = T::lit(1.0 / 255.0);
    let data: Vec<T> = match channels {
        1 => img.to_luma8().into_raw().into_iter().map(|v| T::lit(v as f64) * scale).collect(),
        3 => {
            let raw = img.to_rgb8().into_raw();
            (0..3)
                .flat_map(|c| raw.iter().skip(c).step_by(3).map(move |&v| T::lit(v as f64) * scale))
                .collect()
        }
        c => return Err(DataError::Config(format!("unsupported channel count {c} (expected 1 or 3)"))),
    };
    Ok(Tensor::new(vec![channels, h, w], data)?)
}

/// Decodes a mask whose pixels are all 0 or 255 into `(1, H, W)` with values in `{0, 1}`.
pub fn load_mask<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    if let Some(v) = raw.iter().find(|&&v| v != 0 && v != 255) {
        return Err(DataError::invalid(path, format!("mask value {v} is not 0 or 255")));
    }
    let data = raw.into_iter().map(|v| if v == 255 { T::one() } else { T::zero() }).collect();
    Ok(Tensor::new(vec![1, h, w], data)?)
}

/// Bilinear resize of a `(C, H, W)` image with half-pixel centers.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    if s[1] == height && s[2] == width {
        return Ok(img.clone());
    }
    let x = img.clone().reshape(vec![1, s[0], s[1], s[2]])?;
    Ok(bilinear_resize(&x, height, width)?.reshape(vec![s[0], height, width])?)
}

/// Nearest-neighbor resize of a `(C, H, W)` tensor; source index `floor((i + 0.5) * in / out)`.
pub fn resize_nearest<T: Scalar>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let pick = |i: usize, n: usize, m: usize| (((i as f64 + 0.5) * n as f64 / m as f64) as usize).min(n - 1);
    let d = img.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for i in 0..height {
            let si = pick(i, h, height);
            for j in 0..width {
                out.push(d[(ch * h + si) * w + pick(j, w, width)]);
            }
        }
    }
    Ok(Tensor::new(vec![c, height, width], out)?)
}

/// Loads one manifest row at the requested size.
pub fn load_and_resize<T: Scalar>(row: &ManifestRow, opts: &LoadOptions) -> Result<SampleRecord<T>> {
    let image = resize_bilinear(&load_image(&row.image, opts.channels)?, opts.height, opts.width)?;
    let mask = match &row.mask {
        Some(p) => Some(resize_nearest(&load_mask(p)?, opts.height, opts.width)?),
        None => None,
    };
    Ok(SampleRecord { id: row.id.clone(), image, mask })
}

fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `(1, H, W)` or `(3, H, W)` tensor with values in `[0, 1]` as an
/// 8-bit PNG (values are clamped).
pub fn save_png<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(DataError::invalid(path, format!("cannot write tensor of shape {s:?} as an image")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = img.data();
    let result = if c == 1 {
        GrayImage::from_raw(w as u32, h as u32, d.iter().map(|&v| to_u8(v)).collect()).map(|g| g.save(path))
    } else {
        let plane = h * w;
        let raw = (0..plane).flat_map(|p| (0..3).map(move |ch| to_u8(d[ch * plane + p]))).collect();
        RgbImage::from_raw(w as u32, h as u32, raw).map(|g| g.save(path))
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(source)) => Err(DataError::Decode { path: path.to_path_buf(), source }),
        None => Err(DataError::invalid(path, "image buffer size mismatch")),
    }
}
