//! Training losses.

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DICE_SMOOTH: f64 = 1.0;

/// Segmentation objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegLoss {
    /// `bce * BCE(sigmoid(logits), mask) + dice * Dice`, single-channel head.
    BceDice { bce: f64, dice: f64 },
    /// Pixel-wise cross-entropy of a `C_Y`-channel softmax head; the mask
    /// holds class indices.
    CrossEntropy,
}

impl Default for SegLoss {
    fn default() -> Self {
        SegLoss::BceDice { bce: 0.5, dice: 1.0 }
    }
}

impl SegLoss {
    pub fn compute<'t, T: Scalar>(&self, logits: Var<'t, T>, mask: &Tensor<T>) -> Result<Var<'t, T>> {
        match *self {
            SegLoss::BceDice { bce, dice } => bce_dice_loss(logits, mask, bce, dice),
            SegLoss::CrossEntropy => cross_entropy_loss(logits, mask),
        }
    }
}

pub fn check_binary<T: Scalar>(op: &'static str, mask: &Tensor<T>) -> Result<()> {
    match mask.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        Some(v) => Err(TensorError::invalid(op, format!("mask value {v} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// `1 - mean_b (2 sum(p m) + s) / (sum p + sum m + s)` with `p = sigmoid(logits)`,
/// sums taken per image.
pub fn dice_loss<'t, T: Scalar>(logits: Var<'t, T>, mask: &Tensor<T>) -> Result<Var<'t, T>> {
    let s = logits.shape();
    if s != mask.shape() || s.is_empty() {
        return Err(TensorError::shape("dice_loss", format!("logits {s:?} vs mask {:?}", mask.shape())));
    }
    let tape = logits.tape();
    let (b, per) = (s[0], mask.numel() / s[0].max(1));
    let smooth = T::lit(DICE_SMOOTH);
    let m = tape.constant(mask.clone());
    let p = logits.sigmoid()?;
    let inter = p.mul(m)?.reshape(&[b, per])?.sum_axis(1)?;
    let psum = p.reshape(&[b, per])?.sum_axis(1)?;
    let msum: Vec<T> = mask.data().chunks(per.max(1)).map(|c| c.iter().copied().sum::<T>() + smooth).collect();
    let denom = psum.add(tape.constant(Tensor::new(vec![b], msum)?))?;
    let dice = inter.scale(T::lit(2.0))?.add_scalar(smooth)?.div(denom)?;
    dice.mean()?.neg()?.add_scalar(T::one())
}

/// Weighted BCE-with-logits plus Dice; the mask must be binary.
pub fn bce_dice_loss<'t, T: Scalar>(logits: Var<'t, T>, mask: &Tensor<T>, w_bce: f64, w_dice: f64) -> Result<Var<'t, T>> {
    check_binary("seg_loss", mask)?;
    let bce = logits.bce_with_logits(mask)?.scale(T::lit(w_bce))?;
    let dice = dice_loss(logits, mask)?.scale(T::lit(w_dice))?;
    bce.add(dice)
}

/// Mean pixel-wise cross-entropy. `logits` is `(B, C, H, W)`, `labels`
/// `(B, 1, H, W)` with integer class indices.
pub fn cross_entropy_loss<'t, T: Scalar>(logits: Var<'t, T>, labels: &Tensor<T>) -> Result<Var<'t, T>> {
    const OP: &str = "cross_entropy";
    let s = logits.shape();
    let ls = labels.shape();
    if s.len() != 4 || ls.len() != 4 || ls[1] != 1 || ls[0] != s[0] || ls[2..] != s[2..] {
        return Err(TensorError::shape(OP, format!("logits {s:?} vs labels {ls:?}")));
    }
    let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut onehot = vec![T::zero(); b * c * plane];
    for bi in 0..b {
        for i in 0..plane {
            let v = labels.data()[bi * plane + i];
            let k = v.to_usize().filter(|&k| k < c && T::from_usize(k) == Some(v));
            let k = k.ok_or_else(|| TensorError::invalid(OP, format!("label {v} is not a class index below {c}")))?;
            onehot[(bi * c + k) * plane + i] = T::one();
        }
    }
    let logp = logits.log_softmax(1)?;
    let picked = logp.mul(logits.tape().constant(Tensor::new(s.clone(), onehot)?))?;
    picked.sum()?.scale(T::lit(-1.0 / (b * plane) as f64))
}

/// Mean squared error against a constant target.
pub fn mse<'t, T: Scalar>(pred: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(TensorError::shape(
            "mse",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    pred.sub(pred.tape().constant(target.clone()))?.square()?.mean()
}
