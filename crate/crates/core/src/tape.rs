//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its output value and whatever forward
//! context its backward rule needs (pooling argmax, normalisation scale, ...).
//! Nodes are appended in evaluation order, so the tape is topologically sorted
//! and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::graph::{infer, GraphOps};
use crate::kernels;
use crate::params::{BnId, ParamId, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Records backward context and uses batch statistics.
    Train,
    /// Records nothing and uses running statistics.
    Eval,
}

/// Clamp applied to probabilities before taking logarithms.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        param: ParamId,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    ScaleShift {
        x: Var,
        param: ParamId,
    },
    Concat {
        xs: Vec<Var>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
        pool: usize,
    },
    Upsample {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    /// Loss ops carry d(loss)/d(pred) computed in the forward pass.
    Loss {
        pred: Var,
        dpred: Vec<T>,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Batch statistics observed by one normalisation layer during a training forward.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub id: BnId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    batch_stats: Vec<BatchStats>,
}

impl<T: Scalar> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            batch_stats: Vec::new(),
        }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a `requires_grad` leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn batch_stats(&self) -> &[BatchStats] {
        &self.batch_stats
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let needs = t.requires_grad() && self.mode == Mode::Train;
        self.push(t, Op::Leaf, needs)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let recording = self.mode == Mode::Train;
        let op = if recording { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn vals(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn tensor(shape: Shape, values: Vec<T>) -> Tensor<T> {
        Tensor::from_vec(shape, values).expect("kernel output length")
    }

    pub fn conv2d(&mut self, x: Var, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let xs = self.shape(x);
        let out = infer::conv2d(xs, store, id)?;
        if !self.nodes[x.0].value.is_finite() {
            return Err(Error::NonFinite { op: "conv2d" });
        }
        let p = store.get(id);
        let y = kernels::conv2d_forward(
            self.vals(x),
            xs,
            p.weights.values(),
            p.bias.values(),
            out.c(),
            p.kernel(),
        );
        Ok(self.push(Self::tensor(out, y), Op::Conv2d { x, param: id }, true))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self
            .vals(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(self.shape(x), y), Op::Relu { x }, needs))
    }

    /// Affine-free normalisation over the (n, h, w) axes of each channel.
    pub fn batch_norm(&mut self, x: Var, store: &ParamStore<T>, id: BnId, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        let training = self.mode == Mode::Train;
        infer::batch_norm(xs, store, id, training)?;
        let (mean, var) = if training {
            let (m, v) = kernels::channel_stats(self.vals(x), xs);
            self.batch_stats.push(BatchStats {
                id,
                mean: m.clone(),
                var: v.clone(),
            });
            (m, v)
        } else {
            let r = store.running(id);
            (
                r.mean.iter().map(|v| v.as_f64()).collect(),
                r.var.iter().map(|v| v.as_f64()).collect(),
            )
        };
        let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::from_f64(1.0 / (v + eps).sqrt()))
            .collect();
        let y = kernels::normalize(self.vals(x), xs, &mean_t, &inv_std);
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(xs, y), Op::BatchNorm { x, inv_std }, needs))
    }

    /// Per-channel `gamma · x + beta`, with gamma/beta held as a layer's weights/bias.
    pub fn scale_shift(&mut self, x: Var, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let xs = infer::scale_shift(self.shape(x), store, id)?;
        let p = store.get(id);
        let (g, b) = (p.weights.values(), p.bias.values());
        let plane = xs.plane();
        let y = self
            .vals(x)
            .chunks_exact(plane)
            .enumerate()
            .flat_map(|(pi, chunk)| {
                let ch = pi % xs.c();
                chunk.iter().map(move |&v| g[ch] * v + b[ch])
            })
            .collect();
        Ok(self.push(Self::tensor(xs, y), Op::ScaleShift { x, param: id }, true))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let shapes: Vec<Shape> = xs.iter().map(|&v| self.shape(v)).collect();
        let out = infer::concat(&shapes)?;
        let mut y = Vec::with_capacity(out.numel());
        for n in 0..out.n() {
            for (&v, s) in xs.iter().zip(&shapes) {
                let per = s.c() * s.plane();
                y.extend_from_slice(&self.vals(v)[n * per..(n + 1) * per]);
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(Self::tensor(out, y), Op::Concat { xs: xs.to_vec() }, needs))
    }

    pub fn max_pool2d(&mut self, x: Var, pool: usize) -> Result<Var> {
        let xs = self.shape(x);
        let out = infer::max_pool(xs, pool)?;
        let (y, argmax) = kernels::max_pool_forward(self.vals(x), xs, pool);
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(out, y), Op::MaxPool { x, argmax, pool }, needs))
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.shape(x);
        let out = infer::upsample(xs, factor)?;
        let y = kernels::resize_bilinear_forward(self.vals(x), xs, out.h(), out.w());
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(out, y), Op::Upsample { x }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = infer::same("add", self.shape(a), self.shape(b))?;
        let y = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&p, &q)| p + q)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Self::tensor(s, y), Op::Add { a, b }, needs))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.vals(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(self.shape(x), y), Op::Sigmoid { x }, needs))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let y = kernels::softmax_channels_forward(self.vals(x), xs);
        let needs = self.needs(x);
        Ok(self.push(Self::tensor(xs, y), Op::Softmax { x }, needs))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = Tensor::scalar(self.nodes[x.0].value.sum());
        let needs = self.needs(x);
        Ok(self.push(s, Op::Sum { x }, needs))
    }

    fn loss<'a>(
        &'a self,
        op: &'static str,
        pred: Var,
        truth: &'a Tensor<T>,
    ) -> Result<(Shape, &'a [T], &'a [T])> {
        let ps = self.shape(pred);
        infer::same(op, ps, truth.shape())?;
        Ok((ps, self.vals(pred), truth.values()))
    }

    /// Mean binary cross-entropy of probabilities `pred` against 0/1 `truth`.
    pub fn bce_loss(&mut self, pred: Var, truth: &Tensor<T>) -> Result<Var> {
        let (_, p, t) = self.loss("bce_loss", pred, truth)?;
        let (loss, dpred) = kernels::bce(p, t, LOSS_EPS);
        let needs = self.needs(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Loss { pred, dpred }, needs))
    }

    /// Categorical cross-entropy of channel probabilities against one-hot `truth`, averaged over pixels.
    pub fn cce_loss(&mut self, pred: Var, truth: &Tensor<T>) -> Result<Var> {
        let (s, p, t) = self.loss("cce_loss", pred, truth)?;
        let (loss, dpred) = kernels::cce(p, t, s, LOSS_EPS);
        let needs = self.needs(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Loss { pred, dpred }, needs))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into parameter gradients
    /// in `store` and into the gradients of `requires_grad` leaves.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.mode != Mode::Train {
            return Err(Error::Invalid("backward on an evaluation-mode tape".into()));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                msg: format!("loss has shape {ls}, expected a scalar"),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if node.needs_grad {
                        grads[i] = Some(g);
                    }
                }
                Op::Conv2d { x, param } => {
                    let xs = self.shape(*x);
                    let p = store.get_mut(*param);
                    let (o, k) = (p.out_channels(), p.kernel());
                    let wv = p.weights.values().to_vec();
                    let mut dw = std::mem::take(p.weights.grad_mut());
                    let mut db = std::mem::take(p.bias.grad_mut());
                    let dx = kernels::conv2d_backward(
                        self.vals(*x),
                        xs,
                        &wv,
                        o,
                        k,
                        &g,
                        &mut dw,
                        &mut db,
                        self.needs(*x),
                    );
                    p.weights.set_grad(Some(dw));
                    p.bias.set_grad(Some(db));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Relu { x } => {
                    #[allow(unused_mut)]
                    let mut dx: Vec<T> = self
                        .vals(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                        .collect();
                    #[cfg(test)]
                    if crate::gradcheck::faults::relu_corrupted() {
                        dx.iter_mut().for_each(|d| *d *= T::from_f64(0.5));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm { x, inv_std } => {
                    let dx = kernels::batch_norm_backward(
                        node.value.values(),
                        node.value.shape(),
                        inv_std,
                        &g,
                    );
                    accumulate(&mut grads, *x, dx);
                }
                Op::ScaleShift { x, param } => {
                    let xs = self.shape(*x);
                    let plane = xs.plane();
                    let p = store.get_mut(*param);
                    let gamma = p.weights.values().to_vec();
                    let mut dg = std::mem::take(p.weights.grad_mut());
                    let mut db = std::mem::take(p.bias.grad_mut());
                    let mut dx = Vec::with_capacity(g.len());
                    for (pi, (xv, gv)) in self
                        .vals(*x)
                        .chunks_exact(plane)
                        .zip(g.chunks_exact(plane))
                        .enumerate()
                    {
                        let ch = pi % xs.c();
                        for (&a, &d) in xv.iter().zip(gv) {
                            dg[ch] += a * d;
                            db[ch] += d;
                            dx.push(gamma[ch] * d);
                        }
                    }
                    p.weights.set_grad(Some(dg));
                    p.bias.set_grad(Some(db));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat { xs } => {
                    let out = node.value.shape();
                    let mut offset = 0;
                    for &v in xs {
                        let s = self.shape(v);
                        let per = s.c() * s.plane();
                        if self.needs(v) {
                            let mut dx = Vec::with_capacity(s.numel());
                            for n in 0..out.n() {
                                let base = n * out.c() * out.plane() + offset;
                                dx.extend_from_slice(&g[base..base + per]);
                            }
                            accumulate(&mut grads, v, dx);
                        }
                        offset += per;
                    }
                }
                Op::MaxPool { x, argmax, pool } => {
                    let dx = kernels::max_pool_backward(self.shape(*x), *pool, argmax, &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample { x } => {
                    let out = node.value.shape();
                    let dx =
                        kernels::resize_bilinear_backward(self.shape(*x), out.h(), out.w(), &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sigmoid { x } => {
                    let dx = node
                        .value
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(&y, &d)| d * y * (T::one() - y))
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softmax { x } => {
                    let dx = kernels::softmax_channels_backward(
                        node.value.values(),
                        node.value.shape(),
                        &g,
                    );
                    accumulate(&mut grads, *x, dx);
                }
                Op::Loss { pred, dpred } => {
                    let dx = dpred.iter().map(|&d| d * g[0]).collect();
                    accumulate(&mut grads, *pred, dx);
                }
                Op::Sum { x } => {
                    let n = self.shape(*x).numel();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.needs_grad, g) {
                node.value.set_grad(Some(g));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, dx: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(dx).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(dx),
    }
}

impl<T: Scalar> GraphOps<T> for Tape<T> {
    type Var = Var;

    fn shape_of(&self, v: Var) -> Shape {
        self.shape(v)
    }
    fn conv2d(&mut self, x: Var, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        Tape::conv2d(self, x, store, id)
    }
    fn relu(&mut self, x: Var) -> Result<Var> {
        Tape::relu(self, x)
    }
    fn batch_norm(&mut self, x: Var, store: &ParamStore<T>, id: BnId, eps: f64) -> Result<Var> {
        Tape::batch_norm(self, x, store, id, eps)
    }
    fn scale_shift(&mut self, x: Var, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        Tape::scale_shift(self, x, store, id)
    }
    fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        Tape::concat_channels(self, xs)
    }
    fn max_pool2d(&mut self, x: Var, pool: usize) -> Result<Var> {
        Tape::max_pool2d(self, x, pool)
    }
    fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        Tape::upsample_bilinear(self, x, factor)
    }
    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        Tape::add(self, a, b)
    }
    fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Tape::sigmoid(self, x)
    }
    fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        Tape::softmax_channels(self, x)
    }
}
