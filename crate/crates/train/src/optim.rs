use std::f64::consts::PI;

use ukan_core::{ParamId, ParamStore, Scalar, Tensor};

use crate::error::{Result, TrainError};

/// `lr_min + (lr - lr_min) (1 + cos(pi e / total)) / 2`, stepped per epoch.
pub fn cosine_lr(epoch: usize, total: usize, lr: f64, lr_min: f64) -> f64 {
    let frac = if total == 0 { 1.0 } else { (epoch.min(total)) as f64 / total as f64 };
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per trainable tensor, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub ids: Vec<ParamId>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let ids = store.trainable_ids();
        let zeros: Vec<Tensor<T>> = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape().to_vec())).collect();
        Self { config, step: 0, ids, m: zeros.clone(), v: zeros }
    }

    /// Applies one update from the gradients held in `store`. Tensors without
    /// a gradient are left alone. Any non-finite gradient aborts the step
    /// before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if lr.is_nan() || lr <= 0.0 {
            return Err(TrainError::Config(format!("learning rate {lr} must be positive")));
        }
        for &id in &self.ids {
            if let Some(g) = store.grad(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(TrainError::Config(format!("gradient shape mismatch for {}", store.entry(id).name)));
                }
                if !g.all_finite() {
                    return Err(TrainError::NonFiniteGrad { param: store.entry(id).name.clone(), step: self.step + 1 });
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        for (k, &id) in self.ids.iter().enumerate() {
            let Some(g) = store.grad(id).cloned() else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.get_mut(id).data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
