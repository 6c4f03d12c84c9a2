//! The U-shaped KAN network.
//!
//! Encoder: `L` conv stages (conv3x3-BN-ReLU then 2x2 max pool) followed by
//! `K` token stages (strided 3x3 patch embedding then a token block). The
//! decoder walks back up: each stage upsamples, concatenates the matching
//! encoder output (the input image at the top) and fuses it, with token
//! blocks for the first `K` stages and conv blocks after that. A 1x1 conv
//! produces the output channels.
//!
//! With `time_embed_dim` set the network becomes the time-conditioned noise
//! predictor: token blocks drop the depthwise conv and the residual and add
//! a projected timestep embedding after the layer norm.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{concat, Var};
use crate::diffusion::timestep_embedding;
use crate::error::{Result, TensorError};
use crate::kan::{KanLayer, MlpLayer, SplineSpec};
use crate::nn::{maxpool2x2, upsample_bilinear2x, Activation, BatchNorm2d, Conv2d, LayerNorm, Linear};
use crate::params::{Init, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Small,
    Base,
    Large,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Small, Profile::Base, Profile::Large];

    /// `C1..C3`.
    pub fn conv_channels(self) -> [usize; 3] {
        match self {
            Profile::Small => [64, 96, 128],
            Profile::Base => [128, 160, 256],
            Profile::Large => [256, 320, 512],
        }
    }

    /// `D1, D2`.
    pub fn kan_dims(self) -> [usize; 2] {
        match self {
            Profile::Small => [160, 256],
            Profile::Base => [320, 512],
            Profile::Large => [640, 1024],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Small => "S",
            Profile::Base => "base",
            Profile::Large => "L",
        }
    }
}

impl FromStr for Profile {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "small" => Ok(Profile::Small),
            "base" | "b" | "default" => Ok(Profile::Base),
            "l" | "large" => Ok(Profile::Large),
            _ => Err(TensorError::invalid("profile", format!("unknown profile {s:?}"))),
        }
    }
}

/// Token mixer used at one layer position inside a token block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixerKind {
    #[default]
    Kan,
    Mlp,
    Identity,
}

impl MixerKind {
    pub fn name(self) -> &'static str {
        match self {
            MixerKind::Kan => "kan",
            MixerKind::Mlp => "mlp",
            MixerKind::Identity => "identity",
        }
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kan" => Ok(MixerKind::Kan),
            "mlp" => Ok(MixerKind::Mlp),
            "identity" => Ok(MixerKind::Identity),
            _ => Err(TensorError::invalid("block_kind", format!("unknown kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkanConfig {
    /// `C0`
    pub in_channels: usize,
    /// `C_Y` (segmentation classes, or `C0` for noise prediction)
    pub out_channels: usize,
    /// `C1..C_L`
    pub conv_channels: Vec<usize>,
    /// `D1..D_K`
    pub kan_dims: Vec<usize>,
    /// One entry per layer of every token block (length `N`).
    pub layers: Vec<MixerKind>,
    pub patch_stride: usize,
    pub spline: SplineSpec,
    /// Activation after each MLP mixer layer.
    pub mlp_activation: Activation,
    /// Sinusoidal embedding width; `Some` selects the diffusion network.
    pub time_embed_dim: Option<usize>,
}

impl UkanConfig {
    /// Binary segmentation network with `L = 3`, `K = 2`, `N = 3`.
    pub fn segmentation(profile: Profile) -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            conv_channels: profile.conv_channels().to_vec(),
            kan_dims: profile.kan_dims().to_vec(),
            layers: vec![MixerKind::Kan; 3],
            patch_stride: 2,
            spline: SplineSpec::default(),
            mlp_activation: Activation::Identity,
            time_embed_dim: None,
        }
    }

    /// Noise predictor for `channels`-channel images.
    pub fn diffusion(profile: Profile, channels: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            time_embed_dim: Some(128),
            ..Self::segmentation(profile)
        }
    }

    /// Keep only the first `l` conv stages.
    pub fn with_conv_stages(mut self, l: usize) -> Self {
        self.conv_channels.truncate(l);
        self
    }

    pub fn with_layers(mut self, layers: Vec<MixerKind>) -> Self {
        self.layers = layers;
        self
    }

    pub fn num_conv_stages(&self) -> usize {
        self.conv_channels.len()
    }

    pub fn num_tok_stages(&self) -> usize {
        self.kan_dims.len()
    }

    pub fn is_diffusion(&self) -> bool {
        self.time_embed_dim.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(TensorError::invalid("UkanConfig", d));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.conv_channels.is_empty() || self.kan_dims.is_empty() || self.layers.is_empty() {
            return bad("need at least one conv stage, one token stage and one layer per block".into());
        }
        if self.conv_channels.iter().chain(&self.kan_dims).any(|&c| c == 0) {
            return bad("stage widths must be positive".into());
        }
        if !(1..=2).contains(&self.patch_stride) {
            return bad(format!("patch_stride must be 1 or 2, got {}", self.patch_stride));
        }
        if let Some(d) = self.time_embed_dim {
            if d < 2 || d % 2 != 0 {
                return bad(format!("time_embed_dim must be even and >= 2, got {d}"));
            }
        }
        self.spline.validate()
    }

    /// Width of encoder stage `s` (`s = 0` is the input image).
    pub fn stage_channels(&self, s: usize) -> usize {
        let l = self.num_conv_stages();
        match s {
            0 => self.in_channels,
            s if s <= l => self.conv_channels[s - 1],
            s => self.kan_dims[s - l - 1],
        }
    }

    /// Output width of decoder stage `s`.
    pub fn decoder_channels(&self, s: usize) -> usize {
        if s == 0 {
            self.conv_channels[0]
        } else {
            self.stage_channels(s)
        }
    }

    /// Spatial reduction from stage `s - 1` to stage `s`.
    pub fn stage_factor(&self, s: usize) -> usize {
        if s <= self.num_conv_stages() {
            2
        } else {
            self.patch_stride
        }
    }

    /// Required divisor of the input height and width.
    pub fn input_divisor(&self) -> usize {
        (1..=self.num_conv_stages() + self.num_tok_stages())
            .map(|s| self.stage_factor(s))
            .product()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let d = self.input_divisor();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(TensorError::shape(
                "ukan",
                format!("expects (B, {}, H, W), got {shape:?}", self.in_channels),
            ));
        }
        if !shape[2].is_multiple_of(d) || !shape[3].is_multiple_of(d) || shape[2] == 0 || shape[3] == 0 {
            return Err(TensorError::shape(
                "ukan",
                format!("input {}x{} is not divisible by {d}", shape[2], shape[3]),
            ));
        }
        Ok(())
    }
}

/// Tokens `(B, H*W, D)` with the map size needed to fold them back.
#[derive(Debug, Clone, Copy)]
pub struct TokenizedFeature<'t, T: Scalar> {
    pub tokens: Var<'t, T>,
    pub h: usize,
    pub w: usize,
}

/// `(B, D, H, W) -> (B, H*W, D)`; row-major over positions.
pub fn tokenize<'t, T: Scalar>(x: Var<'t, T>) -> Result<TokenizedFeature<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::shape("tokenize", format!("expects (B,D,H,W), got {s:?}")));
    }
    let tokens = x.permute(&[0, 2, 3, 1])?.reshape(&[s[0], s[2] * s[3], s[1]])?;
    Ok(TokenizedFeature { tokens, h: s[2], w: s[3] })
}

/// Inverse of [`tokenize`].
pub fn detokenize<'t, T: Scalar>(z: TokenizedFeature<'t, T>) -> Result<Var<'t, T>> {
    let s = z.tokens.shape();
    if s.len() != 3 || s[1] != z.h * z.w {
        return Err(TensorError::shape(
            "detokenize",
            format!("tokens {s:?} do not fill a {}x{} map", z.h, z.w),
        ));
    }
    z.tokens.reshape(&[s[0], z.h, z.w, s[2]])?.permute(&[0, 3, 1, 2])
}

/// Conv3x3, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, cin: usize, cout: usize) -> Self {
        Self {
            conv: Conv2d::same3x3(&mut init.scope("conv"), cin, cout),
            bn: BatchNorm2d::new(&mut init.scope("bn"), cout),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(cx, x)?;
        self.bn.forward(cx, y)?.relu()
    }

    pub fn num_params(&self) -> u64 {
        self.conv.num_params() + self.bn.num_params()
    }
}

#[derive(Debug, Clone)]
pub enum Mixer {
    Kan(KanLayer),
    Mlp(MlpLayer),
    Identity,
}

impl Mixer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, kind: MixerKind, dim: usize, cfg: &UkanConfig) -> Self {
        match kind {
            MixerKind::Kan => Mixer::Kan(KanLayer::new(init, dim, dim, cfg.spline)),
            MixerKind::Mlp => Mixer::Mlp(MlpLayer::new(init, dim, dim, cfg.mlp_activation)),
            MixerKind::Identity => Mixer::Identity,
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Kan(_) => MixerKind::Kan,
            Mixer::Mlp(_) => MixerKind::Mlp,
            Mixer::Identity => MixerKind::Identity,
        }
    }

    /// Applied per token over the last axis.
    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Mixer::Kan(l) => l.forward(cx, x),
            Mixer::Mlp(l) => l.forward(cx, x),
            Mixer::Identity => Ok(x),
        }
    }

    pub fn num_params(&self) -> u64 {
        match self {
            Mixer::Kan(l) => l.num_params(),
            Mixer::Mlp(l) => l.num_params(),
            Mixer::Identity => 0,
        }
    }

    pub fn flops(&self, rows: usize) -> u64 {
        match self {
            Mixer::Kan(l) => l.flops(rows),
            Mixer::Mlp(l) => l.flops(rows),
            Mixer::Identity => 0,
        }
    }
}

/// Depthwise 3x3 conv, batch norm, ReLU on the token map.
#[derive(Debug, Clone)]
pub struct DwConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl DwConvBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, dim: usize) -> Self {
        Self {
            conv: Conv2d::new(&mut init.scope("dwconv"), dim, dim, 3, 1, 1, dim, true),
            bn: BatchNorm2d::new(&mut init.scope("bn"), dim),
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &mut Session<'t, '_, T>,
        z: TokenizedFeature<'t, T>,
    ) -> Result<TokenizedFeature<'t, T>> {
        let map = detokenize(z)?;
        let y = self.conv.forward(cx, map)?;
        tokenize(self.bn.forward(cx, y)?.relu()?)
    }
}

/// One layer of a token block: the mixer, then (segmentation only) the
/// depthwise conv path.
#[derive(Debug, Clone)]
pub struct TokLayer {
    pub mixer: Mixer,
    pub dw: Option<DwConvBlock>,
}

/// `Linear(E, D) -> silu -> Linear(D, D)` applied to the sinusoidal embedding.
#[derive(Debug, Clone)]
pub struct TimeProjection {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TimeProjection {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, embed_dim: usize, dim: usize) -> Self {
        Self {
            fc1: Linear::new(&mut init.scope("fc1"), embed_dim, dim, true),
            fc2: Linear::new(&mut init.scope("fc2"), dim, dim, true),
        }
    }

    /// `(B, E) -> (B, D)`.
    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, emb: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.fc1.forward(cx, emb)?.silu()?;
        self.fc2.forward(cx, h)
    }

    pub fn num_params(&self) -> u64 {
        self.fc1.num_params() + self.fc2.num_params()
    }

    pub fn flops(&self, batch: usize) -> u64 {
        self.fc1.flops(batch) + (batch * self.fc1.n_out) as u64 * 4 + self.fc2.flops(batch)
    }
}

/// Token block.
///
/// Segmentation: `Z' = LN(Z + P(Z))` where `P` runs each layer's mixer
/// followed by DwConv-BN-ReLU.
/// Diffusion: `Z' = LN(M(Z)) + F(TE(t))` where `M` chains the mixers only.
#[derive(Debug, Clone)]
pub struct TokBlock {
    pub dim: usize,
    pub layers: Vec<TokLayer>,
    pub ln: LayerNorm,
    pub time: Option<TimeProjection>,
}

impl TokBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, dim: usize, cfg: &UkanConfig) -> Self {
        let layers = cfg
            .layers
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let mut li = init.scope(format!("layers.{i}"));
                let mixer = Mixer::new(&mut li.scope("mixer"), kind, dim, cfg);
                let dw = (!cfg.is_diffusion()).then(|| DwConvBlock::new(&mut li, dim));
                TokLayer { mixer, dw }
            })
            .collect();
        let ln = LayerNorm::new(&mut init.scope("ln"), dim);
        let time = cfg
            .time_embed_dim
            .map(|e| TimeProjection::new(&mut init.scope("time"), e, dim));
        Self { dim, layers, ln, time }
    }

    /// `temb` is the `(B, E)` sinusoidal embedding; required exactly when the
    /// block was built for diffusion.
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &mut Session<'t, '_, T>,
        z: TokenizedFeature<'t, T>,
        temb: Option<Var<'t, T>>,
    ) -> Result<TokenizedFeature<'t, T>> {
        let s = z.tokens.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(TensorError::shape(
                "tok_block",
                format!("tokens {s:?} do not have width {}", self.dim),
            ));
        }
        let mut h = z;
        for layer in &self.layers {
            h.tokens = layer.mixer.forward(cx, h.tokens)?;
            if let Some(dw) = &layer.dw {
                h = dw.forward(cx, h)?;
            }
        }
        let tokens = match (&self.time, temb) {
            (None, _) => {
                let sum = z.tokens.add(h.tokens)?;
                self.ln.forward(cx, sum)?
            }
            (Some(proj), Some(e)) => {
                let normed = self.ln.forward(cx, h.tokens)?;
                let te = proj.forward(cx, e)?.reshape(&[s[0], 1, self.dim])?;
                normed.add(te)?
            }
            (Some(_), None) => {
                return Err(TensorError::invalid("tok_block", "diffusion block needs a time embedding"))
            }
        };
        Ok(TokenizedFeature { tokens, ..z })
    }

    pub fn num_params(&self) -> u64 {
        let layers: u64 = self
            .layers
            .iter()
            .map(|l| {
                l.mixer.num_params()
                    + l.dw
                        .as_ref()
                        .map_or(0, |d| d.conv.num_params() + d.bn.num_params())
            })
            .sum();
        layers + self.ln.num_params() + self.time.as_ref().map_or(0, |t| t.num_params())
    }
}

/// Shape of every stage output, recorded during a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Ukan {
    pub config: UkanConfig,
    pub enc_conv: Vec<ConvBlock>,
    pub patch_embed: Vec<Conv2d>,
    pub enc_tok: Vec<TokBlock>,
    /// Decoder token stages, deepest first.
    pub dec_fuse: Vec<Conv2d>,
    pub dec_tok: Vec<TokBlock>,
    /// Decoder conv stages, deepest first (the last one runs at full size).
    pub dec_conv: Vec<ConvBlock>,
    pub head: Conv2d,
}

impl Ukan {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, config: UkanConfig) -> Result<Self> {
        config.validate()?;
        let (l, k) = (config.num_conv_stages(), config.num_tok_stages());
        let cfg = &config;
        let enc_conv = (1..=l)
            .map(|s| ConvBlock::new(&mut init.scope(format!("enc.{s}")), cfg.stage_channels(s - 1), cfg.stage_channels(s)))
            .collect();
        let mut patch_embed = Vec::with_capacity(k);
        let mut enc_tok = Vec::with_capacity(k);
        for s in l + 1..=l + k {
            let mut si = init.scope(format!("enc.{s}"));
            let (cin, d) = (cfg.stage_channels(s - 1), cfg.stage_channels(s));
            patch_embed.push(Conv2d::new(&mut si.scope("embed"), cin, d, 3, cfg.patch_stride, 1, 1, true));
            enc_tok.push(TokBlock::new(&mut si.scope("block"), d, cfg));
        }
        let mut dec_fuse = Vec::with_capacity(k);
        let mut dec_tok = Vec::with_capacity(k);
        for s in (l..l + k).rev() {
            let mut si = init.scope(format!("dec.{s}"));
            let cin = cfg.decoder_channels(s + 1) + cfg.stage_channels(s);
            let d = cfg.decoder_channels(s);
            dec_fuse.push(Conv2d::same3x3(&mut si.scope("fuse"), cin, d));
            dec_tok.push(TokBlock::new(&mut si.scope("block"), d, cfg));
        }
        let dec_conv = (0..l)
            .rev()
            .map(|s| {
                let cin = cfg.decoder_channels(s + 1) + cfg.stage_channels(s);
                ConvBlock::new(&mut init.scope(format!("dec.{s}")), cin, cfg.decoder_channels(s))
            })
            .collect();
        let head = Conv2d::new(&mut init.scope("head"), cfg.decoder_channels(0), cfg.out_channels, 1, 1, 0, 1, true);
        Ok(Self {
            config,
            enc_conv,
            patch_embed,
            enc_tok,
            dec_fuse,
            dec_tok,
            dec_conv,
            head,
        })
    }

    /// Forward pass. `t` holds one timestep per batch element and must be
    /// given exactly for the diffusion network.
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &mut Session<'t, '_, T>,
        x: Var<'t, T>,
        t: Option<&[usize]>,
    ) -> Result<Var<'t, T>> {
        self.forward_traced(cx, x, t, None)
    }

    pub fn forward_traced<'t, T: Scalar>(
        &self,
        cx: &mut Session<'t, '_, T>,
        x: Var<'t, T>,
        t: Option<&[usize]>,
        mut trace: Option<&mut Vec<StageShape>>,
    ) -> Result<Var<'t, T>> {
        let cfg = &self.config;
        cfg.check_input(&x.shape())?;
        let batch = x.shape()[0];
        let temb = match (cfg.time_embed_dim, t) {
            (Some(e), Some(t)) => {
                if t.len() != batch {
                    return Err(TensorError::shape(
                        "ukan",
                        format!("{} timesteps for a batch of {batch}", t.len()),
                    ));
                }
                Some(cx.input(timestep_embedding::<T>(t, e)))
            }
            (Some(_), None) => return Err(TensorError::invalid("ukan", "diffusion network needs timesteps")),
            (None, Some(_)) => return Err(TensorError::invalid("ukan", "segmentation network takes no timesteps")),
            (None, None) => None,
        };
        let mut record = |name: String, v: Var<'t, T>| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(StageShape { name, shape: v.shape() });
            }
        };

        let mut skips = vec![x];
        for (i, h) in self.conv_phase(cx, x)?.into_iter().enumerate() {
            record(format!("enc.{}", i + 1), h);
            skips.push(h);
        }
        let mut h = *skips.last().unwrap();
        let l = cfg.num_conv_stages();
        for (j, (embed, block)) in self.patch_embed.iter().zip(&self.enc_tok).enumerate() {
            let z = tokenize(embed.forward(cx, h)?)?;
            h = detokenize(block.forward(cx, z, temb)?)?;
            record(format!("enc.{}", l + j + 1), h);
            skips.push(h);
        }

        let deepest = skips.len() - 1;
        for (j, (fuse, block)) in self.dec_fuse.iter().zip(&self.dec_tok).enumerate() {
            let s = deepest - 1 - j;
            let up = upsample_by(h, cfg.stage_factor(s + 1))?;
            let cat = concat(&[up, skips[s]], 1)?;
            let z = tokenize(fuse.forward(cx, cat)?)?;
            h = detokenize(block.forward(cx, z, temb)?)?;
            record(format!("dec.{s}"), h);
        }
        for (j, block) in self.dec_conv.iter().enumerate() {
            let s = l - 1 - j;
            let up = upsample_by(h, cfg.stage_factor(s + 1))?;
            h = block.forward(cx, concat(&[up, skips[s]], 1)?)?;
            record(format!("dec.{s}"), h);
        }
        let out = self.head.forward(cx, h)?;
        record("head".into(), out);
        Ok(out)
    }

    /// Encoder conv stages `X_1..X_L`.
    pub fn conv_phase<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        self.config.check_input(&x.shape())?;
        let mut out = Vec::with_capacity(self.enc_conv.len());
        let mut h = x;
        for block in &self.enc_conv {
            h = maxpool2x2(block.forward(cx, h)?)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Exact number of trainable scalars.
    pub fn num_params(&self) -> u64 {
        let conv: u64 = self.enc_conv.iter().chain(&self.dec_conv).map(ConvBlock::num_params).sum();
        let convs: u64 = self.patch_embed.iter().chain(&self.dec_fuse).map(Conv2d::num_params).sum();
        let tok: u64 = self.enc_tok.iter().chain(&self.dec_tok).map(TokBlock::num_params).sum();
        conv + convs + tok + self.head.num_params()
    }

    /// Analytic FLOP count of one forward pass at `input = (B, C0, H, W)`.
    pub fn flops(&self, input: &[usize]) -> Result<FlopReport> {
        crate::flops::count(self, input)
    }
}

fn upsample_by<T: Scalar>(x: Var<'_, T>, factor: usize) -> Result<Var<'_, T>> {
    match factor {
        1 => Ok(x),
        _ => upsample_bilinear2x(x),
    }
}

pub use crate::flops::FlopReport;

/// Plain-tensor convenience: eval-mode forward without recording gradients.
pub fn predict<T: Scalar>(
    model: &Ukan,
    store: &mut crate::params::ParamStore<T>,
    x: &Tensor<T>,
    t: Option<&[usize]>,
) -> Result<Tensor<T>> {
    let tape = crate::autodiff::Tape::new();
    let mut cx = Session::inference(&tape, store);
    let xv = cx.input(x.clone());
    Ok(model.forward(&mut cx, xv, t)?.to_tensor())
}
