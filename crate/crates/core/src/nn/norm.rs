//! Batch and layer normalization.

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance over `B x H x W`.
    pub var: Vec<T>,
    /// Number of values per channel.
    pub count: usize,
}

fn check_affine(op: &'static str, x: &[usize], gamma: &[usize], beta: &[usize], features: usize) -> Result<()> {
    if gamma != [features] || beta != [features] {
        return Err(TensorError::shape(
            op,
            format!("gamma {gamma:?} / beta {beta:?} must be [{features}] for input {x:?}"),
        ));
    }
    Ok(())
}

/// Values saved by the forward pass for the backward rule.
struct Affine<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Training-mode batch norm over `(B, C, H, W)`; statistics per channel.
pub fn batch_norm_train<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    const OP: &str = "batch_norm";
    let xv = x.value();
    let s = xv.shape().to_vec();
    if s.len() != 4 {
        return Err(TensorError::shape(OP, format!("expects (B,C,H,W), got {s:?}")));
    }
    if s[0] < 2 {
        return Err(TensorError::invalid(OP, "training mode needs a batch of at least 2"));
    }
    let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
    check_affine(OP, &s, &gamma.shape(), &beta.shape(), c)?;
    let count = b * plane;
    let nf = T::from_usize(count).unwrap();
    let xd = xv.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for bi in 0..b {
            acc += xd[(bi * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
        mean[ch] = acc / nf;
        let mut sq = T::zero();
        for bi in 0..b {
            for &v in &xd[(bi * c + ch) * plane..][..plane] {
                sq += (v - mean[ch]) * (v - mean[ch]);
            }
        }
        var[ch] = sq / nf;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let (gv, bv) = (gamma.value(), beta.value());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = xhat[i] * gv.data()[ch] + bv.data()[ch];
            }
        }
    }
    let saved = Affine { xhat, inv_std };
    let value = Tensor::from_parts(s.clone(), out);
    let y = x.tape().record(OP, &[x, gamma, beta], value, move |args| {
        let (g, gam) = (args.grad.data(), args.inputs[1].data());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = vec![T::zero(); g.len()];
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    sum_g += g[i];
                    sum_gx += g[i] * saved.xhat[i];
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            // dx = gamma * inv_std / N * (N g - sum g - xhat sum(g xhat))
            let k = gam[ch] * saved.inv_std[ch] / nf;
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    dx[i] = k * (nf * g[i] - sum_g - saved.xhat[i] * sum_gx);
                }
            }
        }
        vec![
            Some(Tensor::from_parts(s.clone(), dx)),
            Some(Tensor::from_parts(vec![c], dgamma)),
            Some(Tensor::from_parts(vec![c], dbeta)),
        ]
    })?;
    Ok((y, BatchStats { mean, var, count }))
}

/// Eval-mode batch norm with fixed running statistics.
pub fn batch_norm_eval<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Var<'t, T>> {
    const OP: &str = "batch_norm_eval";
    let xv = x.value();
    let s = xv.shape().to_vec();
    if s.len() != 4 {
        return Err(TensorError::shape(OP, format!("expects (B,C,H,W), got {s:?}")));
    }
    let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
    check_affine(OP, &s, &gamma.shape(), &beta.shape(), c)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::shape(OP, format!("running stats must have {c} entries")));
    }
    let inv_std: Vec<T> = running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let xd = xv.data();
    let (gv, bv) = (gamma.value(), beta.value());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                xhat[i] = (xd[i] - running_mean[ch]) * inv_std[ch];
                out[i] = xhat[i] * gv.data()[ch] + bv.data()[ch];
            }
        }
    }
    let value = Tensor::from_parts(s.clone(), out);
    x.tape().record(OP, &[x, gamma, beta], value, move |args| {
        let (g, gam) = (args.grad.data(), args.inputs[1].data());
        let mut dx = vec![T::zero(); g.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    dx[i] = g[i] * gam[ch] * inv_std[ch];
                    dgamma[ch] += g[i] * xhat[i];
                    dbeta[ch] += g[i];
                }
            }
        }
        vec![
            Some(Tensor::from_parts(s.clone(), dx)),
            Some(Tensor::from_parts(vec![c], dgamma)),
            Some(Tensor::from_parts(vec![c], dbeta)),
        ]
    })
}

/// Layer norm over the last axis with per-feature `gamma`, `beta`.
pub fn layer_norm<'t, T: Scalar>(x: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
    const OP: &str = "layer_norm";
    let xv = x.value();
    let s = xv.shape().to_vec();
    let d = *s
        .last()
        .ok_or_else(|| TensorError::shape(OP, "rank-0 input"))?;
    check_affine(OP, &s, &gamma.shape(), &beta.shape(), d)?;
    let rows = xv.numel() / d.max(1);
    let df = T::from_usize(d).unwrap();
    let xd = xv.data();
    let (gv, bv) = (gamma.value(), beta.value());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xd.len()];
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
        inv_std[r] = (var + eps).sqrt().recip();
        for j in 0..d {
            let h = (row[j] - mean) * inv_std[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv.data()[j] + bv.data()[j];
        }
    }
    let saved = Affine { xhat, inv_std };
    let value = Tensor::from_parts(s.clone(), out);
    x.tape().record(OP, &[x, gamma, beta], value, move |args| {
        let (g, gam) = (args.grad.data(), args.inputs[1].data());
        let mut dx = vec![T::zero(); g.len()];
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        let mut gh = vec![T::zero(); d];
        for r in 0..rows {
            let (mut sum_gh, mut sum_ghx) = (T::zero(), T::zero());
            for j in 0..d {
                let i = r * d + j;
                dgamma[j] += g[i] * saved.xhat[i];
                dbeta[j] += g[i];
                gh[j] = g[i] * gam[j];
                sum_gh += gh[j];
                sum_ghx += gh[j] * saved.xhat[i];
            }
            let k = saved.inv_std[r] / df;
            for j in 0..d {
                let i = r * d + j;
                dx[i] = k * (df * gh[j] - sum_gh - saved.xhat[i] * sum_ghx);
            }
        }
        vec![
            Some(Tensor::from_parts(s.clone(), dx)),
            Some(Tensor::from_parts(vec![d], dgamma)),
            Some(Tensor::from_parts(vec![d], dbeta)),
        ]
    })
}
