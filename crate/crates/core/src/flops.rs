//! Parameter and FLOP accounting.
//!
//! Cost model, per forward pass:
//!
//! | op | FLOPs |
//! |---|---|
//! | matmul / conv | 2 per MAC, plus 1 per output for a bias |
//! | batch norm (folded affine) | 2 per element |
//! | layer norm | 7 per element |
//! | relu / residual add | 1 per element |
//! | silu | 4 per element |
//! | 2x2 max pool | 3 per output |
//! | bilinear 2x upsample | 7 per output |
//! | B-spline bases | `(G+2k) + sum_{d=1..k} 6 (G+2k-d)` per input |
//!
//! Reshapes, permutes and concatenation are free.

use crate::error::Result;
use crate::model::{ConvBlock, TokBlock, Ukan};
use crate::nn::Conv2d;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub params: u64,
    pub flops: u64,
    /// Per-stage FLOPs in execution order.
    pub stages: Vec<(String, u64)>,
}

impl FlopReport {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.params as f64 / 1e6
    }
}

fn numel(s: &[usize]) -> u64 {
    s.iter().product::<usize>() as u64
}

fn conv_block(b: &ConvBlock, input: &[usize]) -> Result<(u64, Vec<usize>)> {
    let (f, out) = b.conv.flops(input)?;
    Ok((f + 3 * numel(&out), out))
}

fn conv(c: &Conv2d, input: &[usize]) -> Result<(u64, Vec<usize>)> {
    c.flops(input)
}

/// Token block on a `(B, D, H, W)` map.
fn tok_block(b: &TokBlock, map: &[usize]) -> Result<u64> {
    let (batch, rows) = (map[0], map[0] * map[2] * map[3]);
    let elems = numel(map);
    let mut f = 0;
    for layer in &b.layers {
        f += layer.mixer.flops(rows);
        if let Some(dw) = &layer.dw {
            f += dw.conv.flops(map)?.0 + 3 * elems;
        }
    }
    f += 7 * elems + elems;
    if let Some(t) = &b.time {
        f += t.flops(batch);
    }
    Ok(f)
}

fn upsample(shape: &[usize], factor: usize) -> (u64, Vec<usize>) {
    if factor == 1 {
        return (0, shape.to_vec());
    }
    let out = vec![shape[0], shape[1], shape[2] * 2, shape[3] * 2];
    (7 * numel(&out), out)
}

pub(crate) fn count(model: &Ukan, input: &[usize]) -> Result<FlopReport> {
    let cfg = &model.config;
    cfg.check_input(input)?;
    let mut stages = Vec::new();
    let mut skips = vec![input.to_vec()];
    let mut h = input.to_vec();
    for (i, block) in model.enc_conv.iter().enumerate() {
        let (f, out) = conv_block(block, &h)?;
        let pooled = vec![out[0], out[1], out[2] / 2, out[3] / 2];
        stages.push((format!("enc.{}", i + 1), f + 3 * numel(&pooled)));
        h = pooled;
        skips.push(h.clone());
    }
    let l = cfg.num_conv_stages();
    for (j, (embed, block)) in model.patch_embed.iter().zip(&model.enc_tok).enumerate() {
        let (f, out) = conv(embed, &h)?;
        stages.push((format!("enc.{}", l + j + 1), f + tok_block(block, &out)?));
        h = out;
        skips.push(h.clone());
    }
    let deepest = skips.len() - 1;
    for (j, (fuse, block)) in model.dec_fuse.iter().zip(&model.dec_tok).enumerate() {
        let s = deepest - 1 - j;
        let (fu, up) = upsample(&h, cfg.stage_factor(s + 1));
        let cat = vec![up[0], up[1] + skips[s][1], up[2], up[3]];
        let (fc, out) = conv(fuse, &cat)?;
        stages.push((format!("dec.{s}"), fu + fc + tok_block(block, &out)?));
        h = out;
    }
    for (j, block) in model.dec_conv.iter().enumerate() {
        let s = l - 1 - j;
        let (fu, up) = upsample(&h, cfg.stage_factor(s + 1));
        let cat = vec![up[0], up[1] + skips[s][1], up[2], up[3]];
        let (fc, out) = conv_block(block, &cat)?;
        stages.push((format!("dec.{s}"), fu + fc));
        h = out;
    }
    let (f, _) = conv(&model.head, &h)?;
    stages.push(("head".into(), f));
    Ok(FlopReport {
        params: model.num_params(),
        flops: stages.iter().map(|(_, f)| f).sum(),
        stages,
    })
}
