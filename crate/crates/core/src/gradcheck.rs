//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::params::{seeded_rng, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub n_samples: usize,
    pub h: f64,
    pub tol: f64,
    pub seed: u64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_samples: 20,
            h: 1e-5,
            tol: 1e-4,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(samples: Vec<GradSample>, tol: f64) -> Self {
        let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
        Self {
            passed: max_rel_error <= tol,
            max_rel_error,
            tol,
            samples,
        }
    }

    /// Count of sampled analytic gradients that are not exactly zero.
    pub fn nonzero(&self) -> usize {
        self.samples.iter().filter(|s| s.analytic != 0.0).count()
    }
}

pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn loss_value(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.shape().numel() != 1 {
        return Err(Error::InvalidShape {
            op: "grad_check",
            msg: format!("loss shape {}", t.shape()),
        });
    }
    Ok(t.values()[0])
}

fn pick(total: usize, cfg: &GradCheckConfig) -> Vec<usize> {
    let mut rng = seeded_rng(cfg.seed);
    let mut idx = sample(&mut rng, total, cfg.n_samples.min(total)).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares parameter gradients from `build` against central differences on
/// `cfg.n_samples` randomly chosen parameter scalars. `build` must be
/// deterministic given the store.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    mut build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::train();
    let loss = build(store, &mut tape)?;
    tape.backward(loss, store)?;
    drop(tape);

    let mut samples = Vec::new();
    for index in pick(store.scalar_len(), cfg) {
        let analytic = store.scalar_grad(index);
        let orig = store.scalar(index);
        let mut eval = |v: f64, store: &mut ParamStore<f64>| -> Result<f64> {
            store.set_scalar(index, v);
            let mut t = Tape::train();
            let l = build(store, &mut t)?;
            loss_value(&t, l)
        };
        let plus = eval(orig + cfg.h, store)?;
        let minus = eval(orig - cfg.h, store)?;
        store.set_scalar(index, orig);
        let numeric = (plus - minus) / (2.0 * cfg.h);
        samples.push(GradSample {
            index,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric, cfg.floor),
        });
    }
    Ok(GradCheckReport::new(samples, cfg.tol))
}

/// Same check against the entries of an input tensor.
pub fn grad_check_input<F>(
    store: &mut ParamStore<f64>,
    input: &Tensor<f64>,
    mut build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::train();
    let x = tape.input(input.clone().requiring_grad());
    let loss = build(store, &mut tape, x)?;
    tape.backward(loss, store)?;
    let grad = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.shape().numel()]);
    drop(tape);

    let mut eval = |perturbed: Tensor<f64>, store: &mut ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::train();
        let x = t.input(perturbed);
        let l = build(store, &mut t, x)?;
        loss_value(&t, l)
    };
    let mut samples = Vec::new();
    for index in pick(input.shape().numel(), cfg) {
        let mut p = input.clone();
        p.values_mut()[index] += cfg.h;
        let plus = eval(p, store)?;
        let mut m = input.clone();
        m.values_mut()[index] -= cfg.h;
        let minus = eval(m, store)?;
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let analytic = grad[index];
        samples.push(GradSample {
            index,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric, cfg.floor),
        });
    }
    Ok(GradCheckReport::new(samples, cfg.tol))
}
