//! Uniform B-spline bases evaluated with the Cox-de Boor recursion.

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform knot grid for the per-edge splines.
///
/// `grid_size` intervals cover `[grid_min, grid_max]`; the knot vector is
/// extended by `order` intervals on each side, giving `grid_size + 2*order + 1`
/// knots and `grid_size + order` basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSpec {
    pub grid_size: usize,
    pub order: usize,
    pub grid_min: f64,
    pub grid_max: f64,
}

impl Default for SplineSpec {
    /// Cubic splines on 5 intervals over `[-1, 1]`.
    fn default() -> Self {
        Self {
            grid_size: 5,
            order: 3,
            grid_min: -1.0,
            grid_max: 1.0,
        }
    }
}

impl SplineSpec {
    pub fn new(grid_size: usize, order: usize, grid_min: f64, grid_max: f64) -> Result<Self> {
        let spec = Self {
            grid_size,
            order,
            grid_min,
            grid_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(TensorError::invalid("spline", "grid_size must be positive"));
        }
        if !(self.grid_min < self.grid_max) || !self.grid_min.is_finite() || !self.grid_max.is_finite() {
            return Err(TensorError::invalid(
                "spline",
                format!("grid range [{}, {}] is empty", self.grid_min, self.grid_max),
            ));
        }
        Ok(())
    }

    pub fn num_basis(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn num_knots(&self) -> usize {
        self.grid_size + 2 * self.order + 1
    }

    /// Knot spacing.
    pub fn spacing(&self) -> f64 {
        (self.grid_max - self.grid_min) / self.grid_size as f64
    }

    pub fn knots<T: Scalar>(&self) -> Vec<T> {
        let h = self.spacing();
        (0..self.num_knots())
            .map(|j| T::lit(self.grid_min + (j as f64 - self.order as f64) * h))
            .collect()
    }

    /// FLOPs charged for evaluating all bases at one input: one per order-0
    /// indicator and six per recursion entry.
    pub fn flops_per_input(&self) -> u64 {
        let (g, k) = (self.grid_size as u64, self.order as u64);
        let indicators = g + 2 * k;
        let recursion: u64 = (1..=k).map(|d| 6 * (g + 2 * k - d)).sum();
        indicators + recursion
    }
}

/// Reusable evaluator holding the knot vector and scratch space.
pub struct BasisEvaluator<T> {
    spec: SplineSpec,
    knots: Vec<T>,
    work: Vec<T>,
}

impl<T: Scalar> BasisEvaluator<T> {
    pub fn new(spec: SplineSpec) -> Self {
        Self {
            knots: spec.knots(),
            work: vec![T::zero(); spec.num_knots() - 1],
            spec,
        }
    }

    /// Fill `basis` (len `G + k`) with `B_i(x)`, and `deriv` with `dB_i/dx`
    /// when given.
    pub fn eval(&mut self, x: T, basis: &mut [T], mut deriv: Option<&mut [T]>) {
        let k = self.spec.order;
        let t = &self.knots;
        let b = &mut self.work;
        let n0 = t.len() - 1;
        for j in 0..n0 {
            b[j] = if t[j] <= x && x < t[j + 1] { T::one() } else { T::zero() };
        }
        for d in 1..=k {
            if d == k {
                if let Some(deriv) = deriv.as_deref_mut() {
                    let kf = T::from_usize(k).unwrap();
                    for j in 0..basis.len() {
                        let left = kf / (t[j + k] - t[j]) * b[j];
                        let right = kf / (t[j + k + 1] - t[j + 1]) * b[j + 1];
                        deriv[j] = left - right;
                    }
                }
            }
            for j in 0..n0 - d {
                let left = (x - t[j]) / (t[j + d] - t[j]) * b[j];
                let right = (t[j + d + 1] - x) / (t[j + d + 1] - t[j + 1]) * b[j + 1];
                b[j] = left + right;
            }
        }
        if k == 0 {
            if let Some(deriv) = deriv {
                deriv.fill(T::zero());
            }
        }
        basis.copy_from_slice(&b[..basis.len()]);
    }
}

/// Basis values for every element of `x`; output shape is `x.shape + [G + k]`.
pub fn bspline_basis_tensor<T: Scalar>(x: &Tensor<T>, spec: &SplineSpec) -> Tensor<T> {
    let nb = spec.num_basis();
    let mut ev = BasisEvaluator::new(*spec);
    let mut out = vec![T::zero(); x.numel() * nb];
    for (i, &v) in x.data().iter().enumerate() {
        ev.eval(v, &mut out[i * nb..(i + 1) * nb], None);
    }
    let mut shape = x.shape().to_vec();
    shape.push(nb);
    Tensor::from_parts(shape, out)
}

/// Recorded basis evaluation, differentiable with respect to `x`.
pub fn bspline_basis<'t, T: Scalar>(x: Var<'t, T>, spec: &SplineSpec) -> Result<Var<'t, T>> {
    spec.validate()?;
    let xv = x.value();
    let nb = spec.num_basis();
    let mut ev = BasisEvaluator::new(*spec);
    let mut out = vec![T::zero(); xv.numel() * nb];
    let mut deriv = vec![T::zero(); xv.numel() * nb];
    for (i, &v) in xv.data().iter().enumerate() {
        let r = i * nb..(i + 1) * nb;
        ev.eval(v, &mut out[r.clone()], Some(&mut deriv[r]));
    }
    let mut shape = xv.shape().to_vec();
    shape.push(nb);
    let in_shape = xv.shape().to_vec();
    x.tape()
        .record("bspline_basis", &[x], Tensor::from_parts(shape, out), move |args| {
            let g = args.grad.data();
            let dx = g
                .chunks_exact(nb)
                .zip(deriv.chunks_exact(nb))
                .map(|(gr, dr)| gr.iter().zip(dr).map(|(&a, &b)| a * b).sum())
                .collect();
            vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
        })
}
