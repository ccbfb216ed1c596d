//! Learnable parameters, optimizer state and normalisation running statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(pub usize);

/// First/second moment buffers mirroring a layer's weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    fn zeros(nw: usize, nb: usize) -> Self {
        Self {
            weights: vec![T::zero(); nw],
            bias: vec![T::zero(); nb],
        }
    }
}

/// Weights `(out, in, kh, kw)` and bias `(1, out, 1, 1)` of one layer, plus Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub adam_m: Moments<T>,
    pub adam_v: Moments<T>,
    pub step_count: u64,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(name: impl Into<String>, weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let out = weights.shape().n();
        if bias.len() != out {
            return Err(Error::Invalid(format!(
                "bias length {} for {} filters",
                bias.len(),
                out
            )));
        }
        let bias = Tensor::from_vec(Shape::new(1, out, 1, 1), bias)?;
        let nw = weights.shape().numel();
        Ok(Self {
            name: name.into(),
            adam_m: Moments::zeros(nw, out),
            adam_v: Moments::zeros(nw, out),
            weights,
            bias,
            step_count: 0,
        })
    }

    /// He (fan-in) normal weights with zero bias.
    pub fn he_normal(
        name: impl Into<String>,
        out: usize,
        inp: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (inp * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let shape = Shape::new(out, inp, k, k);
        let w: Vec<T> = (0..shape.numel())
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        Self::new(
            name,
            Tensor::from_vec(shape, w).expect("shape"),
            vec![T::zero(); out],
        )
        .expect("bias")
    }

    /// Per-channel scale (stored as weights `(c,1,1,1)`) and shift for the optional affine normalisation.
    pub fn affine(name: impl Into<String>, channels: usize) -> Self {
        let w = Tensor::full(Shape::new(channels, 1, 1, 1), T::one());
        Self::new(name, w, vec![T::zero(); channels]).expect("bias")
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c()
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape().h()
    }

    pub fn count(&self) -> usize {
        self.weights.shape().numel() + self.bias.shape().numel()
    }

    pub fn zero_grad(&mut self) {
        self.weights.set_grad(None);
        self.bias.set_grad(None);
    }
}

/// Exponential running mean/variance for evaluation-mode normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// `running = momentum · running + (1 − momentum) · batch`.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = T::from_f64(momentum * r.as_f64() + (1.0 - momentum) * b);
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = T::from_f64(momentum * r.as_f64() + (1.0 - momentum) * b);
        }
    }
}

/// Every learnable layer and normalisation layer of a network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    pub layers: Vec<LayerParams<T>>,
    pub bn: Vec<RunningStats<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            layers: Vec::new(),
            bn: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: LayerParams<T>) -> ParamId {
        self.layers.push(layer);
        ParamId(self.layers.len() - 1)
    }

    pub fn push_bn(&mut self, stats: RunningStats<T>) -> BnId {
        self.bn.push(stats);
        BnId(self.bn.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &LayerParams<T> {
        &self.layers[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut LayerParams<T> {
        &mut self.layers[id.0]
    }

    pub fn running(&self, id: BnId) -> &RunningStats<T> {
        &self.bn[id.0]
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(LayerParams::zero_grad);
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(LayerParams::count).sum()
    }

    /// Flat view of scalar `(layer, is_bias, index)` addresses, in registry order.
    pub fn scalar_len(&self) -> usize {
        self.count()
    }

    /// Resolves a flat scalar index into `(layer, is_bias, offset)`.
    pub fn locate(&self, mut flat: usize) -> Option<(usize, bool, usize)> {
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weights.shape().numel();
            if flat < nw {
                return Some((li, false, flat));
            }
            flat -= nw;
            let nb = l.bias.shape().numel();
            if flat < nb {
                return Some((li, true, flat));
            }
            flat -= nb;
        }
        None
    }

    pub fn scalar(&self, flat: usize) -> T {
        let (li, is_bias, off) = self.locate(flat).expect("index in range");
        let l = &self.layers[li];
        if is_bias {
            l.bias.values()[off]
        } else {
            l.weights.values()[off]
        }
    }

    pub fn set_scalar(&mut self, flat: usize, v: T) {
        let (li, is_bias, off) = self.locate(flat).expect("index in range");
        let l = &mut self.layers[li];
        if is_bias {
            l.bias.values_mut()[off] = v;
        } else {
            l.weights.values_mut()[off] = v;
        }
    }

    /// Gradient of one flat scalar, zero when no gradient reached it.
    pub fn scalar_grad(&self, flat: usize) -> T {
        let (li, is_bias, off) = self.locate(flat).expect("index in range");
        let l = &self.layers[li];
        let t = if is_bias { &l.bias } else { &l.weights };
        t.grad().map_or(T::zero(), |g| g[off])
    }

    /// Converts every parameter and statistic to another precision; optimizer state resets.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let bias = l
                        .bias
                        .values()
                        .iter()
                        .map(|v| U::from_f64(v.as_f64()))
                        .collect();
                    LayerParams::new(l.name.clone(), l.weights.cast(), bias).expect("same shapes")
                })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|s| RunningStats {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
