//! 2-D convolution (grouped, strided, zero padded) via im2col + gemm.

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Static geometry of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(TensorError::shape(
                OP,
                format!("expects x (B,C,H,W) and w (O,C/g,kh,kw), got {x_shape:?} and {w_shape:?}"),
            ));
        }
        if stride == 0 || groups == 0 {
            return Err(TensorError::invalid(OP, "stride and groups must be positive"));
        }
        let (batch, in_channels, height, width) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (out_channels, cin_g, kernel_h, kernel_w) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(TensorError::shape(
                OP,
                format!("groups {groups} must divide C_in {in_channels} and C_out {out_channels}"),
            ));
        }
        if cin_g != in_channels / groups {
            return Err(TensorError::shape(
                OP,
                format!(
                    "weight expects {cin_g} input channels per group, input has {in_channels} over {groups} groups"
                ),
            ));
        }
        if height + 2 * padding < kernel_h || width + 2 * padding < kernel_w {
            return Err(TensorError::shape(
                OP,
                format!("padded input {height}x{width} (pad {padding}) smaller than kernel {kernel_h}x{kernel_w}"),
            ));
        }
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            groups,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel_h) / stride + 1,
            out_w: (width + 2 * padding - kernel_w) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn cin_g(&self) -> usize {
        self.in_channels / self.groups
    }

    fn cout_g(&self) -> usize {
        self.out_channels / self.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.kernel_h * self.kernel_w
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    /// Multiply-accumulates of one forward pass (bias excluded).
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.pixels() * self.patch()) as u64
    }
}

/// Unfold one group of one sample (`cin_g x H x W`) into `patch x pixels`.
fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], col: &mut [T]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let pixels = g.pixels();
    for c in 0..g.cin_g() {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut col[row * pixels..(row + 1) * pixels];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.height + ih as usize) * g.width..];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                        *v = if iw < 0 || iw >= w { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `patch x pixels` back into `cin_g x H x W`.
fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], dx: &mut [T]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let pixels = g.pixels();
    for c in 0..g.cin_g() {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &col[row * pixels..(row + 1) * pixels];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                    if ih < 0 || ih >= h {
                        continue;
                    }
                    let dst = &mut dx[(c * g.height + ih as usize) * g.width..];
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                        if iw >= 0 && iw < w {
                            dst[iw as usize] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution on plain tensors.
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Tensor<T> {
    let (cin_g, cout_g, patch, pixels) = (g.cin_g(), g.cout_g(), g.patch(), g.pixels());
    let in_sample = g.in_channels * g.height * g.width;
    let out_sample = g.out_channels * pixels;
    let mut out = vec![T::zero(); g.batch * out_sample];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); patch * pixels] };
    let (xd, wd) = (x.data(), w.data());
    for bi in 0..g.batch {
        for gi in 0..g.groups {
            let xs = &xd[bi * in_sample + gi * cin_g * g.height * g.width..][..cin_g * g.height * g.width];
            let colref: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(g, xs, &mut col);
                &col
            };
            let ws = &wd[gi * cout_g * patch..(gi + 1) * cout_g * patch];
            let os = &mut out[bi * out_sample + gi * cout_g * pixels..][..cout_g * pixels];
            T::gemm(cout_g, patch, pixels, T::one(), ws, (patch, 1), colref, (pixels, 1), T::zero(), os, (pixels, 1));
        }
        if let Some(b) = b {
            for (co, &bv) in b.data().iter().enumerate() {
                for v in &mut out[bi * out_sample + co * pixels..][..pixels] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::from_parts(g.output_shape(), out)
}

/// Recorded 2-D convolution. `w` is `(C_out, C_in/groups, kh, kw)`.
pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    w: Var<'t, T>,
    b: Option<Var<'t, T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var<'t, T>> {
    let (xv, wv) = (x.value(), w.value());
    let g = ConvGeometry::new(xv.shape(), wv.shape(), stride, padding, groups)?;
    let bv = b.map(|b| b.value());
    if let Some(bv) = &bv {
        if bv.shape() != [g.out_channels] {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", bv.shape(), g.out_channels),
            ));
        }
    }
    let value = conv2d_forward(&g, &xv, &wv, bv.as_deref());
    let mut inputs = vec![x, w];
    inputs.extend(b);
    let has_bias = b.is_some();
    x.tape().record("conv2d", &inputs, value, move |args| {
        let (x, w, dy) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
        let (cin_g, cout_g, patch, pixels) = (g.cin_g(), g.cout_g(), g.patch(), g.pixels());
        let plane = g.height * g.width;
        let in_sample = g.in_channels * plane;
        let out_sample = g.out_channels * pixels;
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); w.len()];
        let mut col = vec![T::zero(); patch * pixels];
        let mut dcol = vec![T::zero(); patch * pixels];
        for bi in 0..g.batch {
            for gi in 0..g.groups {
                let xs = &x[bi * in_sample + gi * cin_g * plane..][..cin_g * plane];
                let dys = &dy[bi * out_sample + gi * cout_g * pixels..][..cout_g * pixels];
                let ws = &w[gi * cout_g * patch..(gi + 1) * cout_g * patch];
                let colref: &[T] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(&g, xs, &mut col);
                    &col
                };
                // dW_g += dY_g (cout_g, pixels) * col^T (pixels, patch)
                let dws = &mut dw[gi * cout_g * patch..(gi + 1) * cout_g * patch];
                T::gemm(cout_g, pixels, patch, T::one(), dys, (pixels, 1), colref, (1, pixels), T::one(), dws, (patch, 1));
                // dcol = W_g^T (patch, cout_g) * dY_g (cout_g, pixels)
                let dxs = &mut dx[bi * in_sample + gi * cin_g * plane..][..cin_g * plane];
                if g.is_pointwise() {
                    T::gemm(patch, cout_g, pixels, T::one(), ws, (1, patch), dys, (pixels, 1), T::one(), dxs, (pixels, 1));
                } else {
                    T::gemm(patch, cout_g, pixels, T::one(), ws, (1, patch), dys, (pixels, 1), T::zero(), &mut dcol, (pixels, 1));
                    col2im(&g, &dcol, dxs);
                }
            }
        }
        let mut grads = vec![
            Some(Tensor::from_parts(args.inputs[0].shape().to_vec(), dx)),
            Some(Tensor::from_parts(args.inputs[1].shape().to_vec(), dw)),
        ];
        if has_bias {
            let mut db = vec![T::zero(); g.out_channels];
            for bi in 0..g.batch {
                for (co, acc) in db.iter_mut().enumerate() {
                    *acc += dy[bi * out_sample + co * pixels..][..pixels].iter().copied().sum::<T>();
                }
            }
            grads.push(Some(Tensor::from_parts(vec![g.out_channels], db)));
        }
        grads
    })
}

/// Depthwise 3x3 convolution, stride 1, padding 1 (`groups == channels`).
pub fn depthwise_conv<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[1] != 1 {
        return Err(TensorError::shape(
            "depthwise_conv",
            format!("weight {ws:?} is not depthwise for input {xs:?}"),
        ));
    }
    conv2d(x, w, b, 1, 1, xs[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution oracle.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
        let (bn, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let _ = cin;
        let og = cout / groups;
        let mut out = Tensor::zeros(vec![bn, cout, ho, wo]);
        for n in 0..bn {
            for o in 0..cout {
                let grp = o / og;
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..cg {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let ih = (i * stride + u) as isize - pad as isize;
                                    let iw = (j * stride + v) as isize - pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                        acc += w.get(&[o, c, u, v]) * x.get(&[n, grp * cg + c, ih as usize, iw as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[n, o, i, j], acc);
                    }
                }
            }
        }
        out
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, s: usize, p: usize, g: usize) -> Tensor<f64> {
        let tape = Tape::new();
        let bv = b.map(|b| tape.constant(b.clone()));
        conv2d(tape.constant(x.clone()), tape.constant(w.clone()), bv, s, p, g).unwrap().to_tensor()
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(vec![2, 3, 4, 5], 1.0, &mut rng);
        let w = Tensor::eye(3).reshape(vec![3, 3, 1, 1]).unwrap();
        assert_eq!(run(&x, &w, None, 1, 0, 1), x);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::<f64>::ones(vec![1, 1, 5, 5]);
        let w = Tensor::ones(vec![1, 1, 3, 3]);
        let y = run(&x, &w, None, 1, 1, 1);
        assert_eq!(y.get(&[0, 0, 2, 2]), 9.0);
        assert_eq!(y.get(&[0, 0, 0, 0]), 4.0);
        assert_eq!(y.get(&[0, 0, 4, 4]), 4.0);
        assert_eq!(y.get(&[0, 0, 0, 2]), 6.0);
    }

    #[test]
    fn output_extent_formula() {
        let g = ConvGeometry::new(&[1, 4, 32, 32], &[8, 4, 3, 3], 2, 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (16, 16));
        assert!(ConvGeometry::new(&[1, 4, 8, 8], &[8, 3, 3, 3], 1, 1, 1).is_err());
        assert!(ConvGeometry::new(&[1, 4, 8, 8], &[6, 1, 3, 3], 1, 1, 4).is_err());
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, groups, stride, pad, k) in &[
            (3, 4, 1, 1, 1, 3),
            (4, 6, 2, 2, 1, 3),
            (5, 5, 5, 1, 1, 3),
            (2, 3, 1, 1, 0, 1),
            (3, 2, 1, 2, 0, 2),
        ] {
            let x = Tensor::randn(vec![2, cin, 7, 6], 1.0, &mut rng);
            let w = Tensor::randn(vec![cout, cin / groups, k, k], 1.0, &mut rng);
            let b = Tensor::randn(vec![cout], 1.0, &mut rng);
            let got = run(&x, &w, Some(&b), stride, pad, groups);
            let want = naive_conv(&x, &w, &b, stride, pad, groups);
            assert!(got.max_abs_diff(&want) <= 1e-10, "{cin} {cout} {groups}");
        }
    }

    #[test]
    fn depthwise_identity_and_zeroed_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(vec![1, 3, 4, 4], 1.0, &mut rng);
        let mut w = Tensor::zeros(vec![3, 1, 3, 3]);
        for c in 0..3 {
            w.set(&[c, 0, 1, 1], 1.0);
        }
        let tape = Tape::new();
        let y = depthwise_conv(tape.constant(x.clone()), tape.constant(w.clone()), None).unwrap();
        assert_eq!(y.to_tensor(), x);

        w.set(&[1, 0, 1, 1], 0.0);
        let y = depthwise_conv(tape.constant(x.clone()), tape.constant(w), None).unwrap().to_tensor();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y.get(&[0, 1, i, j]), 0.0);
                assert_eq!(y.get(&[0, 0, i, j]), x.get(&[0, 0, i, j]));
            }
        }
    }

    #[test]
    fn linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(vec![2, 3, 6, 6], 1.0, &mut rng);
        let y = Tensor::randn(vec![2, 3, 6, 6], 1.0, &mut rng);
        let w = Tensor::randn(vec![4, 3, 3, 3], 1.0, &mut rng);
        let (a, b) = (0.7, -1.3);
        let comb = x.zip_with(&y, |p, q| a * p + b * q).unwrap();
        let lhs = run(&comb, &w, None, 1, 1, 1);
        let rhs = run(&x, &w, None, 1, 1, 1)
            .zip_with(&run(&y, &w, None, 1, 1, 1), |p, q| a * p + b * q)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }
}
