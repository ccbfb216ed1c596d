//! Network assembly: encoder submodules, integration module, cross-fused
//! decoder submodules and the pixel classifier.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphOps, LayerKind, LayerRecord, ShapeTracer};
use crate::model::config::{BnReluOrder, ModelConfig, BRANCH_KERNELS};
use crate::params::{seeded_rng, BnId, LayerParams, ParamId, ParamStore, RunningStats};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Convolution followed by ReLU and normalisation, in the configured order.
#[derive(Clone, Copy, Debug)]
struct ConvUnit {
    conv: ParamId,
    bn: BnId,
    affine: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct EncoderStage {
    branches: [ConvUnit; 3],
}

#[derive(Clone, Copy, Debug)]
struct IntegrationBranch {
    conv: ParamId,
    pool: usize,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    branches: [ConvUnit; 3],
    /// Post-add 1×1 units, present only with cross deconvolution.
    fuse: Option<[ConvUnit; 3]>,
    mix: ConvUnit,
    refine: ConvUnit,
}

#[derive(Clone, Debug)]
struct Plan {
    encoder: Vec<EncoderStage>,
    integration: Vec<IntegrationBranch>,
    decoder: Vec<DecoderStage>,
    classifier: ParamId,
}

/// One encoder→decoder addition: `(encoder submodule, encoder kernel, decoder submodule, decoder kernel)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CrossFusion {
    pub encoder_stage: usize,
    pub encoder_kernel: usize,
    pub decoder_stage: usize,
    pub decoder_kernel: usize,
}

impl std::fmt::Display for CrossFusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(enc{} k{}, dec{} k{})",
            self.encoder_stage, self.encoder_kernel, self.decoder_stage, self.decoder_kernel
        )
    }
}

/// Outputs of one encoder submodule.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput<V> {
    pub branches: [V; 3],
    pub concat: V,
    pub pooled: V,
}

/// Every submodule output of one forward graph.
#[derive(Clone, Debug)]
pub struct Stages<V> {
    pub encoder: Vec<EncoderOutput<V>>,
    pub integration: Option<V>,
    pub decoder: Vec<V>,
    pub output: V,
}

/// Assembled network: configuration, parameters and wiring.
#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    plan: Plan,
    cross_fusion: Vec<CrossFusion>,
    layers: Vec<LayerRecord>,
}

struct Builder<'a, T> {
    cfg: &'a ModelConfig,
    store: ParamStore<T>,
    rng: rand_chacha::ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: String, out: usize, inp: usize, k: usize) -> ParamId {
        self.store
            .push(LayerParams::he_normal(name, out, inp, k, &mut self.rng))
    }

    fn unit(&mut self, name: &str, out: usize, inp: usize, k: usize) -> ConvUnit {
        let conv = self.conv(format!("{name}.conv"), out, inp, k);
        let bn = self
            .store
            .push_bn(RunningStats::new(format!("{name}.bn"), out));
        let affine = self.cfg.bn_affine.then(|| {
            self.store
                .push(LayerParams::affine(format!("{name}.affine"), out))
        });
        ConvUnit { conv, bn, affine }
    }

    fn branches(&mut self, prefix: &str, out: usize, inp: usize) -> [ConvUnit; 3] {
        BRANCH_KERNELS.map(|k| self.unit(&format!("{prefix}.k{k}"), out, inp, k))
    }
}

/// Builds the network for `cfg` with deterministic He initialisation from `cfg.seed`.
pub fn assemble_model<T: Scalar>(cfg: &ModelConfig) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let d = cfg.depth;
    let mut b = Builder {
        cfg,
        store: ParamStore::new(),
        rng: seeded_rng(cfg.seed),
    };

    let mut encoder = Vec::with_capacity(d);
    let mut inp = cfg.in_channels;
    for (s, &w) in cfg.encoder_widths.iter().enumerate() {
        encoder.push(EncoderStage {
            branches: b.branches(&format!("enc{}", s + 1), w / 3, inp),
        });
        inp = w;
    }

    let mut integration = Vec::new();
    if cfg.use_integration_module {
        let pools = cfg.integration_pools();
        for i in 0..=d {
            let (src, name) = if i < d {
                (cfg.encoder_widths[i], format!("integ.enc{}", i + 1))
            } else {
                (cfg.in_channels, "integ.raw".to_string())
            };
            let conv = b.conv(format!("{name}.conv"), cfg.integration_widths[i], src, 1);
            integration.push(IntegrationBranch {
                conv,
                pool: pools[i],
            });
        }
    }

    let mut decoder = Vec::with_capacity(d);
    let mut inp = cfg.bottleneck_channels();
    for (j, &w) in cfg.decoder_widths.iter().enumerate() {
        let name = format!("dec{}", j + 1);
        let branches = b.branches(&name, w / 3, inp);
        let fuse = cfg
            .use_cross_deconv
            .then(|| BRANCH_KERNELS.map(|k| b.unit(&format!("{name}.fuse{k}"), w / 3, w / 3, 1)));
        let mix = b.unit(&format!("{name}.mix"), w, w, 1);
        let refine = b.unit(&format!("{name}.refine"), w, w, 3);
        decoder.push(DecoderStage {
            branches,
            fuse,
            mix,
            refine,
        });
        inp = w;
    }
    let classifier = b.conv("classifier".into(), cfg.n_classes, inp, 1);

    let mut cross_fusion = Vec::new();
    if cfg.use_cross_deconv {
        for j in 0..d {
            for (ei, &ek) in BRANCH_KERNELS.iter().enumerate() {
                cross_fusion.push(CrossFusion {
                    encoder_stage: d - j,
                    encoder_kernel: ek,
                    decoder_stage: j + 1,
                    decoder_kernel: BRANCH_KERNELS[cfg.cross_mapping[ei]],
                });
            }
        }
    }

    let mut model = ModelGraph {
        config: cfg.clone(),
        params: b.store,
        plan: Plan {
            encoder,
            integration,
            decoder,
            classifier,
        },
        cross_fusion,
        layers: Vec::new(),
    };
    let mut tracer = ShapeTracer::new();
    let x = tracer.input(model.input_shape(1));
    model.build(&mut tracer, x)?;
    model.layers = tracer.layers;
    Ok(model)
}

impl<T: Scalar> ModelGraph<T> {
    pub fn input_shape(&self, batch: usize) -> Shape {
        let c = &self.config;
        Shape::new(batch, c.in_channels, c.input_size, c.input_size)
    }

    pub fn cross_fusion(&self) -> &[CrossFusion] {
        &self.cross_fusion
    }

    /// Layer registry traced at batch size one.
    pub fn layers(&self) -> &[LayerRecord] {
        &self.layers
    }

    pub fn count_layers(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    /// Integration-module convolutions present in the graph.
    pub fn integration_branches(&self) -> usize {
        self.plan.integration.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn unit<G: GraphOps<T>>(&self, g: &mut G, x: G::Var, u: &ConvUnit) -> Result<G::Var> {
        let p = &self.params;
        let eps = self.config.bn_eps;
        let y = g.conv2d(x, p, u.conv)?;
        let norm = |g: &mut G, y| -> Result<G::Var> {
            let y = g.batch_norm(y, p, u.bn, eps)?;
            match u.affine {
                Some(a) => g.scale_shift(y, p, a),
                None => Ok(y),
            }
        };
        match self.config.bn_relu_order {
            BnReluOrder::ReluThenBn => {
                let y = g.relu(y)?;
                norm(g, y)
            }
            BnReluOrder::BnThenRelu => {
                let y = norm(g, y)?;
                g.relu(y)
            }
        }
    }

    /// Encoder submodule `stage` (1-based): three multiscale branches, their
    /// concatenation and a 2×2 max-pool.
    pub fn build_encoder_submodule<G: GraphOps<T>>(
        &self,
        g: &mut G,
        stage: usize,
        x: G::Var,
    ) -> Result<EncoderOutput<G::Var>> {
        let cfg = &self.config;
        let side = cfg.input_size >> (stage - 1);
        let xs = g.shape_of(x);
        if xs.h() != side || xs.w() != side {
            return Err(Error::InvalidShape {
                op: "encoder",
                msg: format!("submodule {stage} expects side {side}, got {xs}"),
            });
        }
        g.set_scope(&format!("enc{stage}"));
        let st = &self.plan.encoder[stage - 1];
        let mut branches = [x; 3];
        for (slot, u) in branches.iter_mut().zip(&st.branches) {
            *slot = self.unit(g, x, u)?;
        }
        let concat = g.concat_channels(&branches)?;
        let pooled = g.max_pool2d(concat, 2)?;
        Ok(EncoderOutput {
            branches,
            concat,
            pooled,
        })
    }

    /// 1×1 convolution + ReLU + max-pool on every encoder output and on the raw
    /// input, all landing at the bottleneck resolution, then concatenated.
    pub fn build_integration_module<G: GraphOps<T>>(
        &self,
        g: &mut G,
        pooled: &[G::Var],
        original: G::Var,
    ) -> Result<G::Var> {
        let b = self.config.bottleneck();
        if pooled.len() + 1 != self.plan.integration.len() {
            return Err(Error::Invalid(format!(
                "integration module takes {} encoder outputs, got {}",
                self.plan.integration.len() - 1,
                pooled.len()
            )));
        }
        g.set_scope("integ");
        let sources = pooled.iter().copied().chain(std::iter::once(original));
        let mut outs = Vec::with_capacity(self.plan.integration.len());
        for (i, (src, br)) in sources.zip(&self.plan.integration).enumerate() {
            let y = g.conv2d(src, &self.params, br.conv)?;
            let y = g.relu(y)?;
            let y = g.max_pool2d(y, br.pool)?;
            let s = g.shape_of(y);
            if s.h() != b || s.w() != b {
                return Err(Error::InvalidShape {
                    op: "integration",
                    msg: format!("branch {} lands at {s}, expected side {b}", i + 1),
                });
            }
            outs.push(y);
        }
        g.concat_channels(&outs)
    }

    /// Decoder submodule `stage` (1-based). `encoder_branches` are the
    /// pre-pool branch outputs of encoder submodule `depth + 1 − stage`.
    pub fn build_decoder_submodule<G: GraphOps<T>>(
        &self,
        g: &mut G,
        stage: usize,
        x: G::Var,
        encoder_branches: Option<[G::Var; 3]>,
    ) -> Result<G::Var> {
        g.set_scope(&format!("dec{stage}"));
        let st = &self.plan.decoder[stage - 1];
        let up = g.upsample_bilinear(x, 2)?;
        let mut dec = [up; 3];
        for (slot, u) in dec.iter_mut().zip(&st.branches) {
            *slot = self.unit(g, up, u)?;
        }
        let merged = match (&st.fuse, encoder_branches) {
            (Some(fuse), Some(enc)) => {
                let mut fused = dec;
                for (ei, &e) in enc.iter().enumerate() {
                    let di = self.config.cross_mapping[ei];
                    let (es, ds) = (g.shape_of(e), g.shape_of(dec[di]));
                    let entry = CrossFusion {
                        encoder_stage: self.config.depth + 1 - stage,
                        encoder_kernel: BRANCH_KERNELS[ei],
                        decoder_stage: stage,
                        decoder_kernel: BRANCH_KERNELS[di],
                    };
                    if es != ds {
                        return Err(Error::CrossFusion {
                            entry: entry.to_string(),
                            left: es,
                            right: ds,
                        });
                    }
                    let sum = g.add(dec[di], e)?;
                    fused[di] = self.unit(g, sum, &fuse[di])?;
                }
                g.concat_channels(&fused)?
            }
            (None, _) => g.concat_channels(&dec)?,
            (Some(_), None) => {
                return Err(Error::Invalid(
                    "cross deconvolution needs encoder branches".into(),
                ))
            }
        };
        let y = self.unit(g, merged, &st.mix)?;
        self.unit(g, y, &st.refine)
    }

    /// Full forward graph from an input variable to per-pixel class scores.
    pub fn build<G: GraphOps<T>>(&self, g: &mut G, input: G::Var) -> Result<G::Var> {
        Ok(self.build_stages(g, input)?.output)
    }

    /// Like [`ModelGraph::build`], also returning every submodule output.
    pub fn build_stages<G: GraphOps<T>>(&self, g: &mut G, input: G::Var) -> Result<Stages<G::Var>> {
        let cfg = &self.config;
        let xs = g.shape_of(input);
        let want = self.input_shape(xs.n());
        if xs != want || xs.n() == 0 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: xs,
                right: want,
            });
        }
        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut x = input;
        for stage in 1..=cfg.depth {
            let out = self.build_encoder_submodule(g, stage, x)?;
            x = out.pooled;
            encoder.push(out);
        }
        let integration = if cfg.use_integration_module {
            let pooled: Vec<G::Var> = encoder.iter().map(|o| o.pooled).collect();
            Some(self.build_integration_module(g, &pooled, input)?)
        } else {
            None
        };
        let mut y = integration.unwrap_or(x);
        let mut decoder = Vec::with_capacity(cfg.depth);
        for stage in 1..=cfg.depth {
            let enc = cfg
                .use_cross_deconv
                .then(|| encoder[cfg.depth - stage].branches);
            y = self.build_decoder_submodule(g, stage, y, enc)?;
            decoder.push(y);
        }
        g.set_scope("head");
        let logits = g.conv2d(y, &self.params, self.plan.classifier)?;
        let output = if cfg.n_classes == 1 {
            g.sigmoid(logits)?
        } else {
            g.softmax_channels(logits)?
        };
        Ok(Stages {
            encoder,
            integration,
            decoder,
            output,
        })
    }

    /// Records the forward pass on `tape`; in train mode batch statistics are
    /// available afterwards through [`Tape::batch_stats`].
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Tensor<T>) -> Result<Var> {
        let x = tape.input(batch.clone());
        self.build(tape, x)
    }

    /// Evaluation-mode class probabilities.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(Mode::Eval);
        let y = self.forward(&mut tape, batch)?;
        Ok(tape.value(y).clone())
    }

    /// Folds a training tape's batch statistics into the running averages.
    pub fn absorb_batch_stats(&mut self, tape: &Tape<T>) {
        let m = self.config.bn_momentum;
        for s in tape.batch_stats() {
            self.params.bn[s.id.0].update(&s.mean, &s.var, m);
        }
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            config: self.config.clone(),
            params: self.params.cast(),
            plan: self.plan.clone(),
            cross_fusion: self.cross_fusion.clone(),
            layers: self.layers.clone(),
        }
    }
}
