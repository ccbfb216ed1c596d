//! Graph-building interface shared by the numeric tape and the shape tracer.
//!
//! Network definitions are written once against [`GraphOps`]; running them on a
//! [`crate::tape::Tape`] computes values and records gradients, running them on a
//! [`ShapeTracer`] only propagates shapes and produces a per-layer audit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{BnId, ParamId, ParamStore};
use crate::tensor::{Scalar, Shape};

pub trait GraphOps<T: Scalar> {
    type Var: Copy;

    fn shape_of(&self, v: Self::Var) -> Shape;

    /// Prefix used to name subsequent non-parametric layers.
    fn set_scope(&mut self, _scope: &str) {}

    fn conv2d(&mut self, x: Self::Var, store: &ParamStore<T>, id: ParamId) -> Result<Self::Var>;
    fn relu(&mut self, x: Self::Var) -> Result<Self::Var>;
    fn batch_norm(
        &mut self,
        x: Self::Var,
        store: &ParamStore<T>,
        id: BnId,
        eps: f64,
    ) -> Result<Self::Var>;
    fn scale_shift(
        &mut self,
        x: Self::Var,
        store: &ParamStore<T>,
        id: ParamId,
    ) -> Result<Self::Var>;
    fn concat_channels(&mut self, xs: &[Self::Var]) -> Result<Self::Var>;
    fn max_pool2d(&mut self, x: Self::Var, pool: usize) -> Result<Self::Var>;
    fn upsample_bilinear(&mut self, x: Self::Var, factor: usize) -> Result<Self::Var>;
    fn add(&mut self, a: Self::Var, b: Self::Var) -> Result<Self::Var>;
    fn sigmoid(&mut self, x: Self::Var) -> Result<Self::Var>;
    fn softmax_channels(&mut self, x: Self::Var) -> Result<Self::Var>;
}

/// Shape rules, shared so that tracing and execution reject exactly the same graphs.
pub mod infer {
    use super::*;

    pub fn conv2d<T: Scalar>(xs: Shape, store: &ParamStore<T>, id: ParamId) -> Result<Shape> {
        let ws = store.get(id).weights.shape();
        if ws.h() != ws.w() || ws.h() == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("kernel {ws} is not square"),
            });
        }
        if xs.c() != ws.c() {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: xs,
                right: ws,
            });
        }
        Ok(xs.with_c(ws.n()))
    }

    pub fn batch_norm<T: Scalar>(
        xs: Shape,
        store: &ParamStore<T>,
        id: BnId,
        training: bool,
    ) -> Result<Shape> {
        let stats = store.running(id);
        if stats.mean.len() != xs.c() {
            return Err(Error::InvalidShape {
                op: "batch_norm",
                msg: format!("{} running channels for input {xs}", stats.mean.len()),
            });
        }
        if training && xs.n() * xs.plane() < 2 {
            return Err(Error::InvalidShape {
                op: "batch_norm",
                msg: format!("input {xs} has a single element per channel"),
            });
        }
        Ok(xs)
    }

    pub fn scale_shift<T: Scalar>(xs: Shape, store: &ParamStore<T>, id: ParamId) -> Result<Shape> {
        let ws = store.get(id).weights.shape();
        if ws.n() != xs.c() || ws.c() != 1 || ws.plane() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scale_shift",
                left: xs,
                right: ws,
            });
        }
        Ok(xs)
    }

    pub fn concat(shapes: &[Shape]) -> Result<Shape> {
        let first = *shapes.first().ok_or_else(|| Error::InvalidShape {
            op: "concat_channels",
            msg: "no inputs".into(),
        })?;
        let mut c = 0;
        for s in shapes {
            if (s.n(), s.h(), s.w()) != (first.n(), first.h(), first.w()) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: first,
                    right: *s,
                });
            }
            c += s.c();
        }
        Ok(first.with_c(c))
    }

    pub fn max_pool(xs: Shape, pool: usize) -> Result<Shape> {
        if pool == 0 || !xs.h().is_multiple_of(pool) || !xs.w().is_multiple_of(pool) {
            return Err(Error::InvalidShape {
                op: "max_pool2d",
                msg: format!("spatial size of {xs} not divisible by pool size {pool}"),
            });
        }
        Ok(xs.with_hw(xs.h() / pool, xs.w() / pool))
    }

    pub fn upsample(xs: Shape, factor: usize) -> Result<Shape> {
        let h = xs.h().checked_mul(factor);
        let w = xs.w().checked_mul(factor);
        match (factor, h, w) {
            (1.., Some(h), Some(w)) => Ok(xs.with_hw(h, w)),
            _ => Err(Error::InvalidShape {
                op: "upsample_bilinear",
                msg: format!("factor {factor} invalid for {xs}"),
            }),
        }
    }

    pub fn same(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
        if a != b {
            return Err(Error::ShapeMismatch {
                op,
                left: a,
                right: b,
            });
        }
        Ok(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv2d,
    Relu,
    BatchNorm,
    ScaleShift,
    Concat,
    MaxPool,
    Upsample,
    Add,
    Sigmoid,
    Softmax,
}

/// One traced layer: wiring, shapes and learnable-scalar count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRecord {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub output: usize,
    pub input_shapes: Vec<Shape>,
    pub output_shape: Shape,
    pub params: usize,
    /// Kernel side for convolutions, window for pooling, factor for upsampling.
    pub size: usize,
}

/// Propagates shapes through a network definition without touching values.
#[derive(Clone, Debug, Default)]
pub struct ShapeTracer {
    shapes: Vec<Shape>,
    pub layers: Vec<LayerRecord>,
    scope: String,
    counters: std::collections::HashMap<(String, &'static str), usize>,
}

impl ShapeTracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, shape: Shape) -> usize {
        self.shapes.push(shape);
        let id = self.shapes.len() - 1;
        self.layers.push(LayerRecord {
            name: "input".into(),
            kind: LayerKind::Input,
            inputs: vec![],
            output: id,
            input_shapes: vec![],
            output_shape: shape,
            params: 0,
            size: 0,
        });
        id
    }

    fn auto_name(&mut self, tag: &'static str) -> String {
        let n = self.counters.entry((self.scope.clone(), tag)).or_insert(0);
        *n += 1;
        if self.scope.is_empty() {
            format!("{tag}{n}")
        } else {
            format!("{}.{tag}{n}", self.scope)
        }
    }

    fn record(
        &mut self,
        name: String,
        kind: LayerKind,
        inputs: &[usize],
        out: Shape,
        params: usize,
        size: usize,
    ) -> usize {
        self.shapes.push(out);
        let id = self.shapes.len() - 1;
        self.layers.push(LayerRecord {
            name,
            kind,
            inputs: inputs.to_vec(),
            output: id,
            input_shapes: inputs.iter().map(|&i| self.shapes[i]).collect(),
            output_shape: out,
            params,
            size,
        });
        id
    }

    fn unary(
        &mut self,
        tag: &'static str,
        kind: LayerKind,
        x: usize,
        out: Shape,
        size: usize,
    ) -> usize {
        let name = self.auto_name(tag);
        self.record(name, kind, &[x], out, 0, size)
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }
}

impl<T: Scalar> GraphOps<T> for ShapeTracer {
    type Var = usize;

    fn shape_of(&self, v: usize) -> Shape {
        self.shapes[v]
    }

    fn set_scope(&mut self, scope: &str) {
        self.scope = scope.to_string();
    }

    fn conv2d(&mut self, x: usize, store: &ParamStore<T>, id: ParamId) -> Result<usize> {
        let out = infer::conv2d(self.shapes[x], store, id)?;
        let p = store.get(id);
        Ok(self.record(
            p.name.clone(),
            LayerKind::Conv2d,
            &[x],
            out,
            p.count(),
            p.kernel(),
        ))
    }

    fn relu(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x];
        Ok(self.unary("relu", LayerKind::Relu, x, s, 0))
    }

    fn batch_norm(
        &mut self,
        x: usize,
        store: &ParamStore<T>,
        id: BnId,
        _eps: f64,
    ) -> Result<usize> {
        let out = infer::batch_norm(self.shapes[x], store, id, false)?;
        let name = store.running(id).name.clone();
        Ok(self.record(name, LayerKind::BatchNorm, &[x], out, 0, 0))
    }

    fn scale_shift(&mut self, x: usize, store: &ParamStore<T>, id: ParamId) -> Result<usize> {
        let out = infer::scale_shift(self.shapes[x], store, id)?;
        let p = store.get(id);
        Ok(self.record(
            p.name.clone(),
            LayerKind::ScaleShift,
            &[x],
            out,
            p.count(),
            0,
        ))
    }

    fn concat_channels(&mut self, xs: &[usize]) -> Result<usize> {
        let shapes: Vec<Shape> = xs.iter().map(|&i| self.shapes[i]).collect();
        let out = infer::concat(&shapes)?;
        let name = self.auto_name("concat");
        Ok(self.record(name, LayerKind::Concat, xs, out, 0, 0))
    }

    fn max_pool2d(&mut self, x: usize, pool: usize) -> Result<usize> {
        let out = infer::max_pool(self.shapes[x], pool)?;
        Ok(self.unary("pool", LayerKind::MaxPool, x, out, pool))
    }

    fn upsample_bilinear(&mut self, x: usize, factor: usize) -> Result<usize> {
        let out = infer::upsample(self.shapes[x], factor)?;
        Ok(self.unary("upsample", LayerKind::Upsample, x, out, factor))
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        let out = infer::same("add", self.shapes[a], self.shapes[b])?;
        let name = self.auto_name("add");
        Ok(self.record(name, LayerKind::Add, &[a, b], out, 0, 0))
    }

    fn sigmoid(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x];
        Ok(self.unary("sigmoid", LayerKind::Sigmoid, x, s, 0))
    }

    fn softmax_channels(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x];
        Ok(self.unary("softmax", LayerKind::Softmax, x, s, 0))
    }
}
