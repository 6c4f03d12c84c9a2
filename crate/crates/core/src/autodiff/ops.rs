//! Differentiable primitives on [`Var`].
//!
//! Binary elementwise ops broadcast by trailing-dimension alignment: the
//! shorter shape is padded with leading 1s, and each aligned pair of extents
//! must be equal or contain a 1.

use crate::autodiff::tape::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::shape(
                    op,
                    format!("cannot broadcast {a:?} with {b:?} (axis {i}: {da} vs {db})"),
                ))
            }
        };
    }
    Ok(out)
}

/// Flat input index for every flat output index under broadcasting.
pub(crate) fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - inp.len();
    let in_strides = strides(inp);
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < pad || inp[i - pad] == 1 {
                0
            } else {
                in_strides[i - pad]
            }
        })
        .collect();
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

type BinFn<T> = fn(T, T) -> T;
type BinGrad<T> = fn(T, T, T) -> T;

fn binary<'t, T: Scalar>(
    op: &'static str,
    a: Var<'t, T>,
    b: Var<'t, T>,
    f: BinFn<T>,
    da: BinGrad<T>,
    db: BinGrad<T>,
) -> Result<Var<'t, T>> {
    let (av, bv) = (a.value(), b.value());
    let out_shape = broadcast_shape(op, av.shape(), bv.shape())?;
    let same = av.shape() == bv.shape();
    let value = if same {
        av.zip_with(&bv, f)?
    } else {
        let ma = broadcast_map(&out_shape, av.shape());
        let mb = broadcast_map(&out_shape, bv.shape());
        let (x, y) = (av.data(), bv.data());
        let data = ma.iter().zip(&mb).map(|(&i, &j)| f(x[i], y[j])).collect();
        Tensor::from_parts(out_shape.clone(), data)
    };
    a.tape().record(op, &[a, b], value, move |args| {
        let (x, y, g) = (&args.inputs[0], &args.inputs[1], args.grad);
        let mut gx = Tensor::zeros(x.shape().to_vec());
        let mut gy = Tensor::zeros(y.shape().to_vec());
        {
            let (xd, yd, gd) = (x.data(), y.data(), g.data());
            let (gxd, gyd) = (gx.data_mut(), gy.data_mut());
            if same {
                for i in 0..gd.len() {
                    gxd[i] = da(xd[i], yd[i], gd[i]);
                    gyd[i] = db(xd[i], yd[i], gd[i]);
                }
            } else {
                let ma = broadcast_map(g.shape(), x.shape());
                let mb = broadcast_map(g.shape(), y.shape());
                for i in 0..gd.len() {
                    let (p, q) = (ma[i], mb[i]);
                    gxd[p] += da(xd[p], yd[q], gd[i]);
                    gyd[q] += db(xd[p], yd[q], gd[i]);
                }
            }
        }
        vec![Some(gx), Some(gy)]
    })
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Elementwise op with derivative `df(x, y)` evaluated from input and output.
    pub fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let value = self.value().map(f);
        self.tape().record(op, &[self], value, move |args| {
            let (x, y, g) = (args.inputs[0].data(), args.output.data(), args.grad.data());
            let data = (0..g.len()).map(|i| g[i] * df(x[i], y[i])).collect();
            vec![Some(Tensor::from_parts(args.grad.shape().to_vec(), data))]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("add", self, other, |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("sub", self, other, |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("mul", self, other, |a, b| a * b, |_, b, g| g * b, |a, _, g| g * a)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        binary(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        self.unary("ln", |x| x.ln(), |x, _| x.recip())
    }

    pub fn sin(self) -> Result<Var<'t, T>> {
        self.unary("sin", |x| x.sin(), |x, _| x.cos())
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// Subgradient 0 at exactly 0.
    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Result<Var<'t, T>> {
        self.unary("silu", silu, |x, _| silu_grad(x))
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let value = Tensor::scalar(self.value().sum());
        self.tape().record("sum", &[self], value, |args| {
            let g = args.grad.item();
            vec![Some(Tensor::full(args.inputs[0].shape().to_vec(), g))]
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.value().numel();
        self.sum()?.scale(T::one() / T::from_usize(n).unwrap())
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = vec![T::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::from_parts(out_shape, out);
        self.tape().record("sum_axis", &[self], value, move |args| {
            let g = args.grad.data();
            let mut gx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    let base = (o * len + a) * inner;
                    gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        if numel(shape) != numel(&old) {
            return Err(TensorError::shape(
                "reshape",
                format!("cannot view {old:?} as {shape:?}"),
            ));
        }
        let value = self.to_tensor().reshape(shape.to_vec())?;
        self.tape().record("reshape", &[self], value, move |args| {
            vec![Some(args.grad.clone().reshape(old.clone()).expect("same numel"))]
        })
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let value = permute_tensor(&x, axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape().record("permute", &[self], value, move |args| {
            vec![Some(permute_tensor(args.grad, &inverse).expect("valid inverse"))]
        })
    }

    /// 2-D matrix product `(m,k) x (k,n)`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        matmul_impl(self, other, false)
    }

    /// `self x other^T` for `(m,k)` and `(n,k)`.
    pub fn matmul_nt(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        matmul_impl(self, other, true)
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "log_softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let m = (0..len).map(|a| xd[at(a)]).fold(T::neg_infinity(), T::max);
                let lse = m + (0..len).map(|a| (xd[at(a)] - m).exp()).sum::<T>().ln();
                for a in 0..len {
                    out[at(a)] = xd[at(a)] - lse;
                }
            }
        }
        let value = Tensor::from_parts(shape.clone(), out);
        self.tape().record("log_softmax", &[self], value, move |args| {
            let (y, g) = (args.output.data(), args.grad.data());
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let gs: T = (0..len).map(|a| g[at(a)]).sum();
                    for a in 0..len {
                        gx[at(a)] = g[at(a)] - y[at(a)].exp() * gs;
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        })
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against `target`,
    /// computed in the overflow-free logit form.
    pub fn bce_with_logits(self, target: &Tensor<T>) -> Result<Var<'t, T>> {
        let z = self.value();
        if z.shape() != target.shape() {
            return Err(TensorError::shape(
                "bce_with_logits",
                format!("logits {:?} vs target {:?}", z.shape(), target.shape()),
            ));
        }
        let n = T::from_usize(z.numel()).unwrap();
        let total: T = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &m)| z.max(T::zero()) - z * m + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let target = target.clone();
        self.tape()
            .record("bce_with_logits", &[self], Tensor::scalar(total / n), move |args| {
                let g = args.grad.item() / n;
                let data = args.inputs[0]
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&z, &m)| (sigmoid(z) - m) * g)
                    .collect();
                vec![Some(Tensor::from_parts(target.shape().to_vec(), data))]
            })
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<'t, T: Scalar>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
    let values: Vec<_> = parts.iter().map(|v| v.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(TensorError::shape("concat", format!("axis {axis} for {base:?}")));
    }
    for v in &values[1..] {
        let s = v.shape();
        let ok = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(TensorError::shape(
                "concat",
                format!("{:?} vs {:?} along axis {axis}", s, base),
            ));
        }
    }
    let outer = numel(&base[..axis]);
    let inner = numel(&base[axis + 1..]);
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&lens) {
            out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = total;
    let value = Tensor::from_parts(shape, out);
    first.tape().record("concat", parts, value, move |args| {
        let g = args.grad.data();
        let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
        let mut cursor = 0;
        for _ in 0..outer {
            for (gi, &len) in grads.iter_mut().zip(&lens) {
                gi.extend_from_slice(&g[cursor..cursor + len * inner]);
                cursor += len * inner;
            }
        }
        grads
            .into_iter()
            .zip(args.inputs)
            .map(|(d, x)| Some(Tensor::from_parts(x.shape().to_vec(), d)))
            .collect()
    })
}

pub(crate) fn permute_tensor<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = x.shape();
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
        return Err(TensorError::shape(
            "permute",
            format!("axes {axes:?} are not a permutation for {shape:?}"),
        ));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    let xd = x.data();
    for _ in 0..n {
        out.push(xd[off]);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            off += src[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn matmul_impl<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>, b_transposed: bool) -> Result<Var<'t, T>> {
    let op = if b_transposed { "matmul_nt" } else { "matmul" };
    let (av, bv) = (a.value(), b.value());
    let (sa, sb) = (av.shape(), bv.shape());
    if sa.len() != 2 || sb.len() != 2 {
        return Err(TensorError::shape(op, format!("expects 2-D operands, got {sa:?} and {sb:?}")));
    }
    let (m, k) = (sa[0], sa[1]);
    let (kb, n) = if b_transposed { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
    if k != kb {
        return Err(TensorError::shape(
            op,
            format!("contraction mismatch: {sa:?} x {sb:?}{}", if b_transposed { "^T" } else { "" }),
        ));
    }
    // strides of b viewed as (k, n)
    let bs = if b_transposed { (1, k) } else { (n, 1) };
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), av.data(), (k, 1), bv.data(), bs, T::zero(), &mut c, (n, 1));
    let value = Tensor::from_parts(vec![m, n], c);
    a.tape().record(op, &[a, b], value, move |args| {
        let (x, y, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
        // dA = G (m,n) * B^T (n,k)
        let mut ga = vec![T::zero(); m * k];
        T::gemm(m, n, k, T::one(), g, (n, 1), y, (bs.1, bs.0), T::zero(), &mut ga, (k, 1));
        // dB(k,n) = A^T (k,m) * G (m,n); stored in b's own layout
        let mut gb = vec![T::zero(); k * n];
        let gb_strides = if b_transposed { (1, k) } else { (n, 1) };
        T::gemm(k, m, n, T::one(), x, (1, k), g, (n, 1), T::zero(), &mut gb, gb_strides);
        vec![
            Some(Tensor::from_parts(vec![m, k], ga)),
            Some(Tensor::from_parts(args.inputs[1].shape().to_vec(), gb)),
        ]
    })
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shape_algebra() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(vec![2, 3]));
        let b = tape.constant(Tensor::ones(vec![3, 4]));
        assert_eq!(a.matmul(b).unwrap().shape(), vec![2, 4]);
        let err = b.matmul(b).unwrap_err();
        assert!(matches!(err, TensorError::Shape { op: "matmul", .. }), "{err}");
        assert!(err.to_string().contains("[3, 4]"));
    }

    #[test]
    fn add_ones() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(vec![2, 2]));
        let out = a.add(a).unwrap().to_tensor();
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn identity_matmul_is_exact() {
        let tape = Tape::<f64>::new();
        let a_val = t(&[3, 2], &[0.1, -2.0, 3.7, 1e-3, 5.5, -0.25]);
        let i = tape.constant(Tensor::eye(3));
        let a = tape.constant(a_val.clone());
        assert_eq!(i.matmul(a).unwrap().to_tensor(), a_val);
    }

    #[test]
    fn sum_of_squares_grad() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
        let loss = x.square().unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn product_rule() {
        let tape = Tape::<f64>::new();
        let xv = t(&[3], &[1.0, -2.0, 0.5]);
        let yv = t(&[3], &[4.0, 3.0, -1.5]);
        let x = tape.leaf(xv.clone(), true);
        let y = tape.leaf(yv.clone(), true);
        let grads = tape.backward(x.mul(y).unwrap().sum().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &yv);
        assert_eq!(grads.get(y).unwrap(), &xv);
    }

    #[test]
    fn grads_accumulate_across_uses() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let loss = x.add(x).unwrap().add(x).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn broadcast_trailing_alignment() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());

        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let b = tape.leaf(t(&[3], &[10.0, 20.0, 30.0]), true);
        let y = x.add(b).unwrap();
        assert_eq!(y.to_tensor().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let grads = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(tape.backward(x.square().unwrap()), Err(TensorError::Backward(_))));
        let c = tape.constant(t(&[1], &[1.0]));
        assert!(matches!(tape.backward(c.sum().unwrap()), Err(TensorError::Backward(_))));
    }

    #[test]
    fn trap_catches_non_finite() {
        let tape = Tape::<f64>::new().with_trap(true);
        let x = tape.leaf(t(&[1], &[0.0]), true);
        assert!(matches!(x.ln(), Err(TensorError::NonFinite { op: "ln" })));
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]), true);
        let y = x.relu().unwrap();
        assert_eq!(y.to_tensor().data(), &[0.0, 0.0, 2.0]);
        let grads = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn silu_at_zero() {
        assert_eq!(silu(0.0f64), 0.0);
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4], |i| i as f64);
        let p = permute_tensor(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), x.get(&[1, 2, 3]));
        assert_eq!(permute_tensor(&p, &[1, 2, 0]).unwrap(), x);
    }
}
