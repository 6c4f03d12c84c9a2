//! Central finite-difference gradient checker.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// Outcome of a gradient check. Failures are reported, never raised.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` per element.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst_index(&self) -> Option<usize> {
        self.rel_errors
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// Options for [`grad_check_with`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

/// Compare the tape gradient of a scalar function `f` at `x` against central
/// differences with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_with(
        f,
        x,
        GradCheckOptions {
            h,
            tol,
            ..Default::default()
        },
    )
}

pub fn grad_check_with<F>(f: F, x: &Tensor<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let loss = f(xv)?;
        let grads = tape.backward(loss)?;
        grads.get_or_zeros(xv).into_data()
    };
    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.leaf(probe, true);
        Ok(f(xv)?.value().item())
    };
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += opts.h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= opts.h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * opts.h));
    }
    Ok(compare(analytic, numeric, opts))
}

/// Build a report from already computed analytic and numeric gradients.
pub fn compare(analytic: Vec<f64>, numeric: Vec<f64>, opts: GradCheckOptions) -> GradCheckReport {
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(opts.floor))
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    let passed = rel_errors.iter().all(|e| e.is_finite() && *e <= opts.tol);
    GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        tol: opts.tol,
        passed,
    }
}

/// One scalar inside a stored parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamProbe {
    pub id: ParamId,
    pub index: usize,
}

/// Pick `n` probes spread over the model: trainable entries are grouped by
/// the first two components of their name (`enc.2`, `dec.0`, `head`, ...),
/// groups are visited round-robin, and each pick is a random element of a
/// random entry, cycling through a group's entries before reusing one.
pub fn sample_probes(store: &ParamStore<f64>, n: usize, rng: &mut impl Rng) -> Vec<ParamProbe> {
    let mut groups: Vec<(String, Vec<ParamId>)> = Vec::new();
    for id in store.trainable_ids() {
        let name = &store.entry(id).name;
        let key: String = name.split('.').take(2).collect::<Vec<_>>().join(".");
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, ids)) => ids.push(id),
            None => groups.push((key, vec![id])),
        }
    }
    for (_, ids) in &mut groups {
        ids.shuffle(rng);
    }
    let mut out = Vec::with_capacity(n);
    let mut round = 0;
    while out.len() < n && !groups.is_empty() {
        for (_, ids) in &groups {
            if out.len() == n {
                break;
            }
            let id = ids[round % ids.len()];
            let index = rng.random_range(0..store.get(id).numel());
            out.push(ParamProbe { id, index });
        }
        round += 1;
    }
    out
}

/// Gradient check of a model loss with respect to individual stored
/// parameters. `loss` builds the scalar loss inside a session whose
/// training flag is `train`; it must not depend on state it mutates.
pub fn param_grad_check<F>(
    store: &mut ParamStore<f64>,
    probes: &[ParamProbe],
    train: bool,
    opts: GradCheckOptions,
    loss: F,
) -> Result<GradCheckReport>
where
    F: for<'t, 's> Fn(&mut Session<'t, 's, f64>) -> Result<Var<'t, f64>>,
{
    store.zero_grads();
    {
        let tape = Tape::new();
        let mut cx = Session::new(&tape, store, train, true);
        let l = loss(&mut cx)?;
        cx.backward(l)?;
    }
    let analytic = probes
        .iter()
        .map(|p| store.grad(p.id).map_or(0.0, |g| g.data()[p.index]))
        .collect();
    store.zero_grads();
    let eval = |store: &mut ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let mut cx = Session::new(&tape, store, train, false);
        Ok(loss(&mut cx)?.value().item())
    };
    let mut numeric = Vec::with_capacity(probes.len());
    for p in probes {
        let orig = store.get(p.id).data()[p.index];
        store.get_mut(p.id).data_mut()[p.index] = orig + opts.h;
        let up = eval(store)?;
        store.get_mut(p.id).data_mut()[p.index] = orig - opts.h;
        let down = eval(store)?;
        store.get_mut(p.id).data_mut()[p.index] = orig;
        numeric.push((up - down) / (2.0 * opts.h));
    }
    Ok(compare(analytic, numeric, opts))
}
