use std::f64::consts::TAU;

use rand::Rng;
use ukan_core::{Scalar, Tensor};

use crate::SampleRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    None,
    /// Uniform over 0, 90, 180 and 270 degrees; non-square images only use 0 and 180.
    RightAngle,
    /// Uniform angle; images are resampled bilinearly, masks by nearest neighbor,
    /// zero outside the source.
    Arbitrary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation: Rotation,
}

impl AugmentConfig {
    pub const NONE: Self = Self { hflip: false, vflip: false, rotation: Rotation::None };
    pub const SEGMENTATION: Self = Self { hflip: true, vflip: true, rotation: Rotation::RightAngle };
    pub const FLIPS: Self = Self { hflip: true, vflip: true, rotation: Rotation::None };
}

/// One draw of the augmentation. Flips are applied first, then the rotation
/// (counter-clockwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
    pub angle: f64,
}

impl Transform {
    pub const IDENTITY: Self = Self { hflip: false, vflip: false, quarter_turns: 0, angle: 0.0 };

    /// Always consumes the same four draws from `rng`, whatever `cfg` enables.
    pub fn sample(cfg: &AugmentConfig, square: bool, rng: &mut impl Rng) -> Self {
        let h = rng.random_bool(0.5);
        let v = rng.random_bool(0.5);
        let q = rng.random_range(0..4u8);
        let a = rng.random_range(0.0..TAU);
        let q = if square { q } else { q & 2 };
        Self {
            hflip: cfg.hflip && h,
            vflip: cfg.vflip && v,
            quarter_turns: if cfg.rotation == Rotation::RightAngle { q } else { 0 },
            angle: if cfg.rotation == Rotation::Arbitrary { a } else { 0.0 },
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.quarter_turns.is_multiple_of(4) && self.angle == 0.0
    }

    fn apply_tensor<T: Scalar>(&self, x: &Tensor<T>, nearest: bool) -> Tensor<T> {
        let mut y = x.clone();
        if self.hflip {
            y = remap(&y, y.shape()[1], y.shape()[2], |i, j, _, w| (i, w - 1 - j));
        }
        if self.vflip {
            y = remap(&y, y.shape()[1], y.shape()[2], |i, j, h, _| (h - 1 - i, j));
        }
        for _ in 0..self.quarter_turns % 4 {
            let (h, w) = (y.shape()[1], y.shape()[2]);
            y = remap(&y, w, h, |i, j, _, sw| (j, sw - 1 - i));
        }
        if self.angle != 0.0 {
            y = rotate(&y, self.angle, nearest);
        }
        y
    }

    /// Applies the same geometric transform to the image and the mask.
    pub fn apply<T: Scalar>(&self, sample: &SampleRecord<T>) -> SampleRecord<T> {
        SampleRecord {
            id: sample.id.clone(),
            image: self.apply_tensor(&sample.image, false),
            mask: sample.mask.as_ref().map(|m| self.apply_tensor(m, true)),
        }
    }
}

/// Builds a `(C, out_h, out_w)` tensor where `out[c, i, j] = x[c, src(i, j)]`;
/// `src` receives the source height and width.
fn remap<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    src: impl Fn(usize, usize, usize, usize) -> (usize, usize),
) -> Tensor<T> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for i in 0..out_h {
            for j in 0..out_w {
                let (si, sj) = src(i, j, h, w);
                out.push(d[(ch * h + si) * w + sj]);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).expect("remap keeps the element count")
}

fn rotate<T: Scalar>(x: &Tensor<T>, angle: f64, nearest: bool) -> Tensor<T> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let d = x.data();
    let at = |ch: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            d[(ch * h + i as usize) * w + j as usize].to_f64().unwrap_or(0.0)
        }
    };
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                // inverse map: rotate the output coordinate back by -angle
                let sy = cy + cos * dy - sin * dx;
                let sx = cx + sin * dy + cos * dx;
                let v = if nearest {
                    at(ch, sy.round() as isize, sx.round() as isize)
                } else {
                    let (y0, x0) = (sy.floor(), sx.floor());
                    let (fy, fx) = (sy - y0, sx - x0);
                    let (y0, x0) = (y0 as isize, x0 as isize);
                    (1.0 - fy) * ((1.0 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x0 + 1))
                        + fy * ((1.0 - fx) * at(ch, y0 + 1, x0) + fx * at(ch, y0 + 1, x0 + 1))
                };
                out.push(T::lit(v));
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("rotation keeps the shape")
}

/// Draws a transform for `sample` and applies it.
pub fn augment<T: Scalar>(sample: &SampleRecord<T>, cfg: &AugmentConfig, rng: &mut impl Rng) -> SampleRecord<T> {
    let s = sample.image.shape();
    Transform::sample(cfg, s[1] == s[2], rng).apply(sample)
}
