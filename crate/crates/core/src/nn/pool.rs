//! 2x2 max pooling and 2x bilinear upsampling.

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_map(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() != 4 {
        return Err(TensorError::shape(op, format!("expects (B,C,H,W), got {s:?}")));
    }
    Ok((s[0] * s[1], s[2], s[3]))
}

/// 2x2 max pooling, stride 2. Ties route to the first maximal element in
/// row-major order.
pub fn maxpool2x2<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    const OP: &str = "maxpool2x2";
    let xv = x.value();
    let s = xv.shape().to_vec();
    let (planes, h, w) = check_map(OP, &s)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::shape(OP, format!("spatial dims must be even, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = xv.data();
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        for i in 0..ho {
            for j in 0..wo {
                let mut best = (p * h + 2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let k = (p * h + 2 * i + di) * w + 2 * j + dj;
                    if xd[k] > xd[best] {
                        best = k;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let value = Tensor::from_parts(vec![s[0], s[1], ho, wo], out);
    x.tape().record(OP, &[x], value, move |args| {
        let mut dx = vec![T::zero(); s.iter().product()];
        for (&k, &g) in argmax.iter().zip(args.grad.data()) {
            dx[k] += g;
        }
        vec![Some(Tensor::from_parts(s.clone(), dx))]
    })
}

/// Source taps `(i0, i1, frac)` for resizing `input` samples to `output`
/// samples with half-pixel centers (`align_corners = false`).
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every plane of a `(B,C,H,W)` tensor (no graph).
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let (planes, h, w) = check_map("bilinear_resize", s)?;
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for p in 0..planes {
        let plane = &xd[p * h * w..(p + 1) * h * w];
        for &(r0, r1, fr) in &rows {
            let fr = T::lit(fr);
            for &(c0, c1, fc) in &cols {
                let fc = T::lit(fc);
                let top = plane[r0 * w + c0] * (T::one() - fc) + plane[r0 * w + c1] * fc;
                let bot = plane[r1 * w + c0] * (T::one() - fc) + plane[r1 * w + c1] * fc;
                out.push(top * (T::one() - fr) + bot * fr);
            }
        }
    }
    Tensor::new(vec![s[0], s[1], out_h, out_w], out)
}

/// Recorded 2x bilinear upsampling (`align_corners = false`).
pub fn upsample_bilinear2x<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    const OP: &str = "upsample_bilinear2x";
    let xv = x.value();
    let s = xv.shape().to_vec();
    let (planes, h, w) = check_map(OP, &s)?;
    let value = bilinear_resize(&xv, 2 * h, 2 * w)?;
    x.tape().record(OP, &[x], value, move |args| {
        let rows = bilinear_taps(h, 2 * h);
        let cols = bilinear_taps(w, 2 * w);
        let g = args.grad.data();
        let mut dx = vec![T::zero(); planes * h * w];
        let wo = 2 * w;
        for p in 0..planes {
            let dplane = &mut dx[p * h * w..(p + 1) * h * w];
            for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
                let fr = T::lit(fr);
                for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let fc = T::lit(fc);
                    let gv = g[(p * 2 * h + oi) * wo + oj];
                    dplane[r0 * w + c0] += gv * (T::one() - fr) * (T::one() - fc);
                    dplane[r0 * w + c1] += gv * (T::one() - fr) * fc;
                    dplane[r1 * w + c0] += gv * fr * (T::one() - fc);
                    dplane[r1 * w + c1] += gv * fr * fc;
                }
            }
        }
        vec![Some(Tensor::from_parts(s.clone(), dx))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_single_window() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(maxpool2x2(x).unwrap().to_tensor().data(), &[4.0]);
    }

    #[test]
    fn constant_maps_are_preserved() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![2, 3, 4, 6], 1.5));
        let p = maxpool2x2(x).unwrap();
        assert_eq!(p.shape(), vec![2, 3, 2, 3]);
        assert!(p.to_tensor().data().iter().all(|&v| v == 1.5));
        let u = upsample_bilinear2x(x).unwrap();
        assert_eq!(u.shape(), vec![2, 3, 8, 12]);
        assert!(u.to_tensor().data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
        assert_eq!(maxpool2x2(u).unwrap().shape(), vec![2, 3, 4, 6]);
    }

    #[test]
    fn odd_pool_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 3, 4]));
        assert!(matches!(maxpool2x2(x), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn ties_route_to_first_max() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(vec![1, 1, 2, 2], 3.0), true);
        let grads = tape.backward(maxpool2x2(x).unwrap().sum().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_matches_closed_form_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::<f64>::randn(vec![1, 1, 2, 2], 1.0, &mut rng);
        let tape = Tape::new();
        let y = upsample_bilinear2x(tape.constant(x.clone())).unwrap().to_tensor();
        // With half-pixel centers, 2 -> 4 samples sit at sources
        // [0 (clamped), 0.25, 0.75, 1 (clamped)].
        let taps = [(0usize, 0.0f64), (0, 0.25), (0, 0.75), (1, 0.0)];
        for (i, &(r, fr)) in taps.iter().enumerate() {
            for (j, &(c, fc)) in taps.iter().enumerate() {
                let at = |a: usize, b: usize| x.get(&[0, 0, a.min(1), b.min(1)]);
                let want = (1.0 - fr) * ((1.0 - fc) * at(r, c) + fc * at(r, c + 1))
                    + fr * ((1.0 - fc) * at(r + 1, c) + fc * at(r + 1, c + 1));
                assert!((y.get(&[0, 0, i, j]) - want).abs() <= 1e-12);
            }
        }
    }
}
