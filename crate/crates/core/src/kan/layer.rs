//! Kolmogorov-Arnold layers and the plain MLP layer used for ablations.
//!
//! A KAN layer from `n_in` to `n_out` features owns one learnable univariate
//! function per edge,
//!
//! ```text
//! phi[q,p](x) = base_weight[q,p] * silu(x) + spline_scale[q,p] * sum_i coeffs[q,p,i] * B_i(x)
//! out[q]      = sum_p phi[q,p](x[p])
//! ```
//!
//! The sum over edges is computed as two matrix products: `silu(x)` against
//! the base weights, and the flattened basis values against the scaled
//! coefficients.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::kan::spline::{bspline_basis, SplineSpec};
use crate::nn::{linear, Activation, Linear};
use crate::params::{Init, ParamId, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Plain tensors of one KAN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayerParams<T> {
    /// `(n_out, n_in, G + k)`
    pub spline_coeffs: Tensor<T>,
    /// `(n_out, n_in)`
    pub base_weight: Tensor<T>,
    /// `(n_out, n_in)`
    pub spline_scale: Tensor<T>,
}

impl<T: Scalar> KanLayerParams<T> {
    /// Coefficients ~ N(0, 0.1 / sqrt(G + k)), base weights uniform with
    /// bound `1/sqrt(n_in)`, spline scales 1.
    pub fn init(n_in: usize, n_out: usize, spec: &SplineSpec, rng: &mut impl Rng) -> Self {
        let nb = spec.num_basis();
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            spline_coeffs: Tensor::randn(vec![n_out, n_in, nb], 0.1 / (nb as f64).sqrt(), rng),
            base_weight: Tensor::uniform(vec![n_out, n_in], -bound, bound, rng),
            spline_scale: Tensor::ones(vec![n_out, n_in]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.base_weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.base_weight.shape()[0]
    }
}

/// KAN layer tensors bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct KanLayerVars<'t, T: Scalar> {
    pub spline_coeffs: Var<'t, T>,
    pub base_weight: Var<'t, T>,
    pub spline_scale: Var<'t, T>,
}

impl<'t, T: Scalar> KanLayerVars<'t, T> {
    pub fn constant(tape: &'t crate::autodiff::Tape<T>, p: &KanLayerParams<T>) -> Self {
        Self {
            spline_coeffs: tape.constant(p.spline_coeffs.clone()),
            base_weight: tape.constant(p.base_weight.clone()),
            spline_scale: tape.constant(p.spline_scale.clone()),
        }
    }
}

/// `(batch, n_in) -> (batch, n_out)`.
pub fn kan_layer_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &KanLayerVars<'t, T>,
    spec: &SplineSpec,
) -> Result<Var<'t, T>> {
    const OP: &str = "kan_layer";
    let xs = x.shape();
    let bw = p.base_weight.shape();
    let nb = spec.num_basis();
    if bw.len() != 2 {
        return Err(TensorError::shape(OP, format!("base_weight must be 2-D, got {bw:?}")));
    }
    let (n_out, n_in) = (bw[0], bw[1]);
    if xs.len() != 2 || xs[1] != n_in {
        return Err(TensorError::shape(
            OP,
            format!("input {xs:?} does not match n_in = {n_in}"),
        ));
    }
    if p.spline_coeffs.shape() != [n_out, n_in, nb] || p.spline_scale.shape() != [n_out, n_in] {
        return Err(TensorError::shape(
            OP,
            format!(
                "coeffs {:?} / scale {:?} inconsistent with ({n_out}, {n_in}, {nb})",
                p.spline_coeffs.shape(),
                p.spline_scale.shape()
            ),
        ));
    }
    let rows = xs[0];
    let base = x.silu()?.matmul_nt(p.base_weight)?;
    let bases = bspline_basis(x, spec)?.reshape(&[rows, n_in * nb])?;
    let weights = p
        .spline_coeffs
        .mul(p.spline_scale.reshape(&[n_out, n_in, 1])?)?
        .reshape(&[n_out, n_in * nb])?;
    base.add(bases.matmul_nt(weights)?)
}

/// Composition of KAN layers in order.
pub fn kan_stack_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    layers: &[KanLayerVars<'t, T>],
    spec: &SplineSpec,
) -> Result<Var<'t, T>> {
    for pair in layers.windows(2) {
        let (a, b) = (pair[0].base_weight.shape(), pair[1].base_weight.shape());
        if a[0] != b[1] {
            return Err(TensorError::shape(
                "kan_stack",
                format!("layer with n_out = {} feeds layer with n_in = {}", a[0], b[1]),
            ));
        }
    }
    layers.iter().try_fold(x, |h, l| kan_layer_forward(h, l, spec))
}

/// `activation(x W^T + b)` on `(batch, n_in)`.
pub fn mlp_layer_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    activation: Activation,
) -> Result<Var<'t, T>> {
    activation.apply(linear(x, weight, Some(bias))?)
}

/// KAN layer module; acts on the last axis of its input.
#[derive(Debug, Clone)]
pub struct KanLayer {
    pub spline_coeffs: ParamId,
    pub base_weight: ParamId,
    pub spline_scale: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub spec: SplineSpec,
}

impl KanLayer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, n_in: usize, n_out: usize, spec: SplineSpec) -> Self {
        let p = KanLayerParams::init(n_in, n_out, &spec, init.rng);
        Self {
            spline_coeffs: init.param("spline_coeffs", p.spline_coeffs),
            base_weight: init.param("base_weight", p.base_weight),
            spline_scale: init.param("spline_scale", p.spline_scale),
            n_in,
            n_out,
            spec,
        }
    }

    pub fn vars<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>) -> KanLayerVars<'t, T> {
        KanLayerVars {
            spline_coeffs: cx.param(self.spline_coeffs),
            base_weight: cx.param(self.base_weight),
            spline_scale: cx.param(self.spline_scale),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let rows = shape.iter().product::<usize>() / self.n_in.max(1);
        let vars = self.vars(cx);
        let y = kan_layer_forward(x.reshape(&[rows, self.n_in])?, &vars, &self.spec)?;
        let mut out = shape;
        *out.last_mut().unwrap() = self.n_out;
        y.reshape(&out)
    }

    pub fn num_params(&self) -> u64 {
        (self.n_out * self.n_in * (self.spec.num_basis() + 2)) as u64
    }

    /// FLOPs for `rows` input vectors: silu and basis evaluation per input,
    /// the two matrix products, the final add, and one coefficient scaling
    /// per forward.
    pub fn flops(&self, rows: usize) -> u64 {
        let (n_in, n_out, nb) = (self.n_in as u64, self.n_out as u64, self.spec.num_basis() as u64);
        let rows = rows as u64;
        let per_row = n_in * (4 + self.spec.flops_per_input()) + 2 * n_in * n_out + 2 * n_in * nb * n_out + n_out;
        rows * per_row + n_out * n_in * nb
    }
}

/// MLP layer module: linear map plus activation.
#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub linear: Linear,
    pub activation: Activation,
}

impl MlpLayer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            linear: Linear::new(init, n_in, n_out, true),
            activation,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.activation.apply(self.linear.forward(cx, x)?)
    }

    pub fn num_params(&self) -> u64 {
        self.linear.num_params()
    }

    pub fn flops(&self, rows: usize) -> u64 {
        self.linear.flops(rows) + (rows * self.linear.n_out) as u64 * self.activation.flops_per_element()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::nn::layers::linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn silu(x: f64) -> f64 {
        x / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_spline_reduces_to_base_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = SplineSpec::default();
        let mut p = KanLayerParams::<f64>::init(3, 2, &spec, &mut rng);
        p.spline_coeffs = Tensor::zeros(vec![2, 3, 8]);
        p.spline_scale = Tensor::randn(vec![2, 3], 1.0, &mut rng);
        let x = Tensor::randn(vec![4, 3], 1.0, &mut rng);
        let tape = Tape::new();
        let y = kan_layer_forward(tape.constant(x.clone()), &KanLayerVars::constant(&tape, &p), &spec)
            .unwrap()
            .to_tensor();
        for b in 0..4 {
            for q in 0..2 {
                let want: f64 = (0..3).map(|i| p.base_weight.get(&[q, i]) * silu(x.get(&[b, i]))).sum();
                assert!((y.get(&[b, q]) - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = SplineSpec::default();
        let p = KanLayerParams::<f64>::init(3, 2, &spec, &mut rng);
        let tape = Tape::new();
        let r = kan_layer_forward(tape.constant(Tensor::zeros(vec![4, 2])), &KanLayerVars::constant(&tape, &p), &spec);
        assert!(matches!(r, Err(TensorError::Shape { .. })));
    }

    #[test]
    fn stack_checks_dimension_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = SplineSpec::default();
        let a = KanLayerParams::<f64>::init(3, 4, &spec, &mut rng);
        let b = KanLayerParams::<f64>::init(5, 2, &spec, &mut rng);
        let tape = Tape::new();
        let layers = [KanLayerVars::constant(&tape, &a), KanLayerVars::constant(&tape, &b)];
        let r = kan_stack_forward(tape.constant(Tensor::zeros(vec![1, 3])), &layers, &spec);
        assert!(matches!(r, Err(TensorError::Shape { op: "kan_stack", .. })));
    }

    #[test]
    fn mlp_identity_and_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(vec![3, 4], 1.0, &mut rng);
        let tape = Tape::new();
        let y = mlp_layer_forward(
            tape.constant(x.clone()),
            tape.constant(Tensor::eye(4)),
            tape.constant(Tensor::zeros(vec![4])),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(y.to_tensor(), x);

        let bias = Tensor::new(vec![2], vec![0.5, -0.25]).unwrap();
        let y = linear(tape.constant(x), tape.constant(Tensor::zeros(vec![2, 4])), Some(tape.constant(bias)))
            .unwrap()
            .to_tensor();
        for r in 0..3 {
            assert_eq!(y.get(&[r, 0]), 0.5);
            assert_eq!(y.get(&[r, 1]), -0.25);
        }
    }

    #[test]
    fn parameter_counts() {
        let mut store = crate::params::ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut store, &mut rng);
        let kan = KanLayer::new(&mut init.scope("kan"), 2, 2, SplineSpec::default());
        let lin = Linear::new(&mut init.scope("lin"), 3, 2, true);
        assert_eq!(kan.num_params(), 40);
        assert_eq!(lin.num_params(), 8);
        assert_eq!(store.num_trainable(), 48);
    }
}
