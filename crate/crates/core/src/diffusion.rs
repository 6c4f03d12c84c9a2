//! DDPM forward process, noise-prediction loss and ancestral sampling.
//!
//! Timesteps are 1-based: `t` runs over `1..=T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TensorError};
use crate::loss::mse;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `beta_t`, `alpha_t = 1 - beta_t` and `alpha_bar_t = prod_{s<=t} alpha_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_1` to `beta_T`.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_1 && beta_1 <= beta_t && beta_t < 1.0) {
            return Err(TensorError::invalid(
                "NoiseSchedule",
                format!("need T >= 1 and 0 < beta_1 <= beta_T < 1, got T={steps}, [{beta_1}, {beta_t}]"),
            ));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_1
                } else {
                    beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(TensorError::invalid(
                "diffusion",
                format!("timestep {t} outside 1..={}", self.steps()),
            ));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Uniform draws from `1..=T`.
    pub fn sample_timesteps(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(1..=self.steps())).collect()
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, one timestep per leading
/// (batch) index.
pub fn q_sample<T: Scalar>(schedule: &NoiseSchedule, x0: &Tensor<T>, t: &[usize], eps: &Tensor<T>) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        return Err(TensorError::shape(
            "q_sample",
            format!("x0 {:?} vs eps {:?}", x0.shape(), eps.shape()),
        ));
    }
    let batch = x0.shape().first().copied().unwrap_or(1);
    if t.len() != batch {
        return Err(TensorError::shape("q_sample", format!("{} timesteps for batch {batch}", t.len())));
    }
    let per = x0.numel() / batch.max(1);
    let mut out = Vec::with_capacity(x0.numel());
    for (b, &tb) in t.iter().enumerate() {
        let ab = schedule.alpha_bars[schedule.check(tb)?];
        let (ca, cn) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
        let r = b * per..(b + 1) * per;
        out.extend(x0.data()[r.clone()].iter().zip(&eps.data()[r]).map(|(&x, &e)| ca * x + cn * e));
    }
    Tensor::new(x0.shape().to_vec(), out)
}

/// Sinusoidal embedding `(B, dim)`: `sin(t w_i)` in the first half and
/// `cos(t w_i)` in the second, `w_i = 10000^(-i / (dim/2))`.
pub fn timestep_embedding<T: Scalar>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let freq = |i: usize| (-(10000f64.ln()) * i as f64 / half as f64).exp();
    Tensor::from_fn(vec![t.len(), dim], |k| {
        let (b, j) = (k / dim, k % dim);
        let arg = t[b] as f64 * freq(j % half);
        T::lit(if j < half { arg.sin() } else { arg.cos() })
    })
}

/// Gaussian noise and timesteps drawn for one training batch.
#[derive(Debug, Clone)]
pub struct NoisyBatch<T> {
    pub t: Vec<usize>,
    pub eps: Tensor<T>,
    pub x_t: Tensor<T>,
}

/// Draw `t ~ U{1..T}` per image, then `eps ~ N(0, 1)` and `x_t`.
pub fn noisy_batch<T: Scalar>(schedule: &NoiseSchedule, x0: &Tensor<T>, rng: &mut impl Rng) -> Result<NoisyBatch<T>> {
    let batch = x0.shape().first().copied().unwrap_or(1);
    let t = schedule.sample_timesteps(batch, rng);
    let eps = Tensor::randn(x0.shape().to_vec(), 1.0, rng);
    let x_t = q_sample(schedule, x0, &t, &eps)?;
    Ok(NoisyBatch { t, eps, x_t })
}

/// Mean squared error between the drawn noise and `predict(x_t, t)`.
pub fn diffusion_loss<'t, T, F>(
    tape: &'t Tape<T>,
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    rng: &mut impl Rng,
    predict: F,
) -> Result<Var<'t, T>>
where
    T: Scalar,
    F: FnOnce(Var<'t, T>, &[usize]) -> Result<Var<'t, T>>,
{
    let nb = noisy_batch(schedule, x0, rng)?;
    let pred = predict(tape.constant(nb.x_t), &nb.t)?;
    mse(pred, &nb.eps)
}

/// One reverse step `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sqrt(beta_t) z`;
/// `z` is ignored at `t = 1`.
pub fn ddpm_step<T: Scalar>(
    schedule: &NoiseSchedule,
    x_t: &[T],
    eps: &[T],
    t: usize,
    z: Option<&[T]>,
    out: &mut [T],
) -> Result<()> {
    let i = schedule.check(t)?;
    let (b, a, ab) = (schedule.betas[i], schedule.alphas[i], schedule.alpha_bars[i]);
    let c_eps = T::lit(b / (1.0 - ab).sqrt());
    let c_out = T::lit(1.0 / a.sqrt());
    let sigma = T::lit(b.sqrt());
    for j in 0..out.len() {
        let mean = c_out * (x_t[j] - c_eps * eps[j]);
        out[j] = match z {
            Some(z) if t > 1 => mean + sigma * z[j],
            _ => mean,
        };
    }
    Ok(())
}

/// Anything that predicts the noise in a batch `x_t` at timesteps `t`.
pub trait NoisePredictor<T: Scalar> {
    fn predict_noise(&mut self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>>;
}

impl<T: Scalar, F> NoisePredictor<T> for F
where
    F: FnMut(&Tensor<T>, &[usize]) -> Result<Tensor<T>>,
{
    fn predict_noise(&mut self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
        self(x_t, t)
    }
}

/// Ancestral sampling of `n` images of shape `image` (`(C, H, W)`),
/// `batch` chains at a time. Image `i` draws all of its noise from stream
/// `i` of a generator seeded with `seed`, so results do not depend on
/// `batch`. Outputs are clipped to `[-1, 1]`.
pub fn ddpm_sample<T: Scalar>(
    model: &mut impl NoisePredictor<T>,
    schedule: &NoiseSchedule,
    image: &[usize],
    n: usize,
    seed: u64,
    batch: usize,
) -> Result<Vec<Tensor<T>>> {
    let per: usize = image.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let m = batch.max(1).min(n - start);
        let mut rngs: Vec<ChaCha8Rng> = (start..start + m)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            })
            .collect();
        let mut shape = vec![m];
        shape.extend_from_slice(image);
        let mut x: Vec<T> = Vec::with_capacity(m * per);
        for r in &mut rngs {
            x.extend(Tensor::<T>::randn(vec![per], 1.0, r).into_data());
        }
        let mut next = vec![T::zero(); m * per];
        for t in (1..=schedule.steps()).rev() {
            let xt = Tensor::new(shape.clone(), x)?;
            let eps = model.predict_noise(&xt, &vec![t; m])?;
            if eps.shape() != xt.shape() {
                return Err(TensorError::shape(
                    "ddpm_sample",
                    format!("model returned {:?} for input {:?}", eps.shape(), xt.shape()),
                ));
            }
            for (k, r) in rngs.iter_mut().enumerate() {
                let span = k * per..(k + 1) * per;
                let z = (t > 1).then(|| Tensor::<T>::randn(vec![per], 1.0, r));
                ddpm_step(
                    schedule,
                    &xt.data()[span.clone()],
                    &eps.data()[span.clone()],
                    t,
                    z.as_ref().map(|z| z.data()),
                    &mut next[span],
                )?;
            }
            x = std::mem::take(&mut next);
            next = xt.into_data();
        }
        let lim = T::one();
        for chunk in x.chunks(per) {
            let clipped = chunk.iter().map(|v| v.max(-lim).min(lim)).collect();
            out.push(Tensor::new(image.to_vec(), clipped)?);
        }
        start += m;
    }
    Ok(out)
}
