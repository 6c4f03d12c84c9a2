//! Parameterized layers: each holds parameter ids into a [`ParamStore`] and
//! delegates to the functional primitives.
//!
//! [`ParamStore`]: crate::params::ParamStore

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::nn::{batch_norm_eval, batch_norm_train, conv2d, layer_norm, ConvGeometry};
use crate::params::{Init, ParamId, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` (Kaiming-uniform with a = sqrt 5).
fn fan_in_uniform<T: Scalar>(init: &mut Init<'_, T>, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, init.rng)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels / groups * kernel * kernel;
        let w = fan_in_uniform(init, vec![out_channels, in_channels / groups, kernel, kernel], fan_in);
        let weight = init.param("weight", w);
        let bias = bias.then(|| {
            let b = fan_in_uniform(init, vec![out_channels], fan_in);
            init.param("bias", b)
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        }
    }

    /// 3x3, stride 1, padding 1.
    pub fn same3x3<T: Scalar>(init: &mut Init<'_, T>, cin: usize, cout: usize) -> Self {
        Self::new(init, cin, cout, 3, 1, 1, 1, true)
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        conv2d(x, w, b, self.stride, self.padding, self.groups)
    }

    pub fn geometry(&self, input: &[usize]) -> Result<ConvGeometry> {
        ConvGeometry::new(
            input,
            &[self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel],
            self.stride,
            self.padding,
            self.groups,
        )
    }

    pub fn num_params(&self) -> u64 {
        let w = self.out_channels * self.in_channels / self.groups * self.kernel * self.kernel;
        (w + if self.bias.is_some() { self.out_channels } else { 0 }) as u64
    }

    /// FLOPs (2 per MAC, plus one add per output for the bias) and output shape.
    pub fn flops(&self, input: &[usize]) -> Result<(u64, Vec<usize>)> {
        let g = self.geometry(input)?;
        let out = g.output_shape();
        let bias = if self.bias.is_some() { out.iter().product::<usize>() as u64 } else { 0 };
        Ok((2 * g.macs() + bias, out))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Scalar>(init: &mut Init<'_, T>, channels: usize) -> Self {
        Self {
            gamma: init.param("gamma", Tensor::ones(vec![channels])),
            beta: init.param("beta", Tensor::zeros(vec![channels])),
            running_mean: init.buffer("running_mean", Tensor::zeros(vec![channels])),
            running_var: init.buffer("running_var", Tensor::ones(vec![channels])),
            channels,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    /// Training mode normalizes with batch statistics and folds them into
    /// the running estimates (unbiased variance); eval mode uses the
    /// running estimates.
    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        let eps = T::lit(self.eps);
        if cx.is_training() {
            let (y, stats) = batch_norm_train(x, gamma, beta, eps)?;
            let m = T::lit(self.momentum);
            let keep = T::one() - m;
            let n = T::from_usize(stats.count).unwrap();
            let unbias = if stats.count > 1 { n / (n - T::one()) } else { T::one() };
            let store = cx.store_mut();
            for (r, &v) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
                *r = keep * *r + m * v * unbias;
            }
            Ok(y)
        } else {
            let store = cx.store();
            let mean = store.get(self.running_mean).data().to_vec();
            let var = store.get(self.running_var).data().to_vec();
            batch_norm_eval(x, gamma, beta, &mean, &var, eps)
        }
    }

    pub fn num_params(&self) -> u64 {
        2 * self.channels as u64
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub features: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new<T: Scalar>(init: &mut Init<'_, T>, features: usize) -> Self {
        Self {
            gamma: init.param("gamma", Tensor::ones(vec![features])),
            beta: init.param("beta", Tensor::zeros(vec![features])),
            features,
            eps: Self::EPS,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        layer_norm(x, gamma, beta, T::lit(self.eps))
    }

    pub fn num_params(&self) -> u64 {
        2 * self.features as u64
    }
}

/// Affine map over the last axis: `y = x W^T + b`, `W` is `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, n_in: usize, n_out: usize, bias: bool) -> Self {
        let w = fan_in_uniform(init, vec![n_out, n_in], n_in);
        let weight = init.param("weight", w);
        let bias = bias.then(|| {
            let b = fan_in_uniform(init, vec![n_out], n_in);
            init.param("bias", b)
        });
        Self {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        linear(x, w, b)
    }

    pub fn num_params(&self) -> u64 {
        (self.n_in * self.n_out + if self.bias.is_some() { self.n_out } else { 0 }) as u64
    }

    /// FLOPs for `rows` input vectors.
    pub fn flops(&self, rows: usize) -> u64 {
        let bias = if self.bias.is_some() { self.n_out } else { 0 };
        (rows * (2 * self.n_in * self.n_out + bias)) as u64
    }
}

/// `x W^T + b` applied over the last axis of `x`.
pub fn linear<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let ws = w.shape();
    let n_in = *shape.last().unwrap_or(&0);
    if ws.len() != 2 || ws[1] != n_in {
        return Err(TensorError::shape(
            "linear",
            format!("input {shape:?} does not match weight {ws:?}"),
        ));
    }
    let rows = shape.iter().product::<usize>() / n_in.max(1);
    let mut y = x.reshape(&[rows, n_in])?.matmul_nt(w)?;
    if let Some(b) = b {
        y = y.add(b)?;
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = ws[0];
    y.reshape(&out_shape)
}
