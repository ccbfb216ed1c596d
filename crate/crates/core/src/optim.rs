//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::LayerParams;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

fn update<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamConfig,
    c1: f64,
    c2: f64,
) {
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
    let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));
    for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step over every layer. Each layer must hold gradients from a preceding backward.
pub fn adam_step<T: Scalar>(layers: &mut [LayerParams<T>], cfg: &AdamConfig) -> Result<()> {
    if let Some(l) = layers
        .iter()
        .find(|l| l.weights.grad().is_none() || l.bias.grad().is_none())
    {
        return Err(Error::Invalid(format!(
            "adam_step: layer {} has no gradient",
            l.name
        )));
    }
    for l in layers.iter_mut() {
        l.step_count += 1;
        let t = l.step_count as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let gw = l.weights.grad().expect("checked").to_vec();
        let gb = l.bias.grad().expect("checked").to_vec();
        update(
            l.weights.values_mut(),
            &gw,
            &mut l.adam_m.weights,
            &mut l.adam_v.weights,
            cfg,
            c1,
            c2,
        );
        update(
            l.bias.values_mut(),
            &gb,
            &mut l.adam_m.bias,
            &mut l.adam_v.bias,
            cfg,
            c1,
            c2,
        );
    }
    Ok(())
}
