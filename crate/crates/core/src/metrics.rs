//! Overlap metrics for binary masks.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `sigmoid(logit) >= threshold`, i.e. `logit >= logit(threshold)`; logit 0
/// lands in the foreground at the default 0.5.
pub fn binarize<T: Scalar>(logits: &Tensor<T>, threshold: f64) -> Tensor<T> {
    logits.map(|z| {
        let p = 1.0 / (1.0 + (-z.to_f64().unwrap()).exp());
        if p >= threshold {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// `|pred & gt|`, `|pred|`, `|gt|`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub inter: u64,
    pub pred: u64,
    pub gt: u64,
}

impl Overlap {
    pub fn count<T: Scalar>(pred: &[T], gt: &[T]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(TensorError::shape("overlap", format!("{} vs {} pixels", pred.len(), gt.len())));
        }
        let bit = |v: T| -> Result<bool> {
            if v == T::one() {
                Ok(true)
            } else if v == T::zero() {
                Ok(false)
            } else {
                Err(TensorError::invalid("overlap", format!("value {v} is not 0 or 1")))
            }
        };
        let mut o = Overlap::default();
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (bit(p)?, bit(g)?);
            o.inter += (p && g) as u64;
            o.pred += p as u64;
            o.gt += g as u64;
        }
        Ok(o)
    }

    pub fn union(&self) -> u64 {
        self.pred + self.gt - self.inter
    }

    /// `|inter| / |union|`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        match self.union() {
            0 => 1.0,
            u => self.inter as f64 / u as f64,
        }
    }

    /// `2 |inter| / (|pred| + |gt|)`; 1 when both masks are empty.
    pub fn f1(&self) -> f64 {
        match self.pred + self.gt {
            0 => 1.0,
            d => 2.0 * self.inter as f64 / d as f64,
        }
    }
}

pub fn iou<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    Ok(Overlap::count(pred, gt)?.iou())
}

pub fn f1<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    Ok(Overlap::count(pred, gt)?.f1())
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Mean ± sample (n - 1) standard deviation; `n = 1` gives std 0.
pub fn aggregate_runs(values: &[f64]) -> Result<MeanStd> {
    let n = values.len();
    if n == 0 {
        return Err(TensorError::invalid("aggregate_runs", "no values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        log::warn!("aggregate_runs: a single run has no spread; reporting std 0");
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(MeanStd { mean, std, n })
}

/// Per-image IoU and F1 over a split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegMetrics {
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
}

impl SegMetrics {
    /// Add every image of a `(B, 1, H, W)` logit batch against its masks.
    pub fn push_batch<T: Scalar>(&mut self, logits: &Tensor<T>, masks: &Tensor<T>, threshold: f64) -> Result<()> {
        if logits.shape() != masks.shape() || logits.ndim() == 0 {
            return Err(TensorError::shape(
                "SegMetrics",
                format!("logits {:?} vs masks {:?}", logits.shape(), masks.shape()),
            ));
        }
        let pred = binarize(logits, threshold);
        let per = pred.numel() / logits.shape()[0].max(1);
        for (p, g) in pred.data().chunks(per).zip(masks.data().chunks(per)) {
            let o = Overlap::count(p, g)?;
            self.iou.push(o.iou());
            self.f1.push(o.f1());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.iou.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iou.is_empty()
    }

    /// Unweighted mean over images.
    pub fn mean_iou(&self) -> f64 {
        mean(&self.iou)
    }

    pub fn mean_f1(&self) -> f64 {
        mean(&self.f1)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
