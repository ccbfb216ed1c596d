//! Mini-batch training, evaluation loss and dataset-level prediction.

use serde::{Deserialize, Serialize};

use crate::data::{make_batch, Batch, BatchIterator, Sample};
use crate::error::{Error, Result};
use crate::metrics::{LabelMask, MetricsAccumulator, MetricsReport, Task};
use crate::model::network::ModelGraph;
use crate::optim::{adam_step, AdamConfig};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Cce,
}

impl LossKind {
    /// Binary cross-entropy for a sigmoid head, categorical otherwise.
    pub fn for_classes(n_classes: usize) -> Self {
        if n_classes == 1 {
            LossKind::Bce
        } else {
            LossKind::Cce
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 4,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Targets matching the head: a 0/1 foreground map for one output channel,
/// otherwise a one-hot encoding over `n_classes` channels.
pub fn encode_targets<T: Scalar>(masks: &[LabelMask], n_classes: usize) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Invalid("no masks to encode".into()))?;
    let (h, w) = (first.height, first.width);
    let c = n_classes.max(1);
    let mut out = Tensor::zeros(Shape::new(masks.len(), c, h, w));
    let plane = h * w;
    let vals = out.values_mut();
    for (n, m) in masks.iter().enumerate() {
        if (m.height, m.width) != (h, w) {
            return Err(Error::Invalid(format!(
                "mask {n} is {}×{}, expected {h}×{w}",
                m.height, m.width
            )));
        }
        for (p, &l) in m.labels.iter().enumerate() {
            if n_classes == 1 {
                if l > 1 {
                    return Err(Error::Invalid(format!("label {l} in a binary mask")));
                }
                vals[n * plane + p] = T::from_f64(l as f64);
            } else {
                if l as usize >= n_classes {
                    return Err(Error::Invalid(format!(
                        "label {l} outside {n_classes} classes"
                    )));
                }
                vals[(n * c + l as usize) * plane + p] = T::one();
            }
        }
    }
    Ok(out)
}

fn record_loss<T: Scalar>(
    model: &ModelGraph<T>,
    tape: &mut Tape<T>,
    batch: &Batch<T>,
) -> Result<Var> {
    let truth = encode_targets::<T>(&batch.masks, model.config.n_classes)?;
    let pred = model.forward(tape, &batch.images)?;
    match LossKind::for_classes(model.config.n_classes) {
        LossKind::Bce => tape.bce_loss(pred, &truth),
        LossKind::Cce => tape.cce_loss(pred, &truth),
    }
}

/// One optimisation step per batch; returns the batch losses in order.
///
/// A non-finite loss aborts with the index of the offending batch before any
/// update from that batch is applied.
pub fn train_epoch<T: Scalar>(
    model: &mut ModelGraph<T>,
    samples: &[Sample],
    opts: &TrainOptions,
    epoch: u64,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    for (i, batch) in
        BatchIterator::<T>::new(samples, opts.batch_size, opts.seed, epoch, opts.shuffle)?
            .enumerate()
    {
        let batch = batch?;
        let mut tape = Tape::new(Mode::Train);
        let loss = record_loss(model, &mut tape, &batch)?;
        let value = tape.value(loss).values()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { batch: i });
        }
        model.params.zero_grad();
        tape.backward(loss, &mut model.params)?;
        model.absorb_batch_stats(&tape);
        adam_step(&mut model.params.layers, &opts.adam)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Sample-weighted mean evaluation-mode loss.
pub fn eval_loss<T: Scalar>(
    model: &ModelGraph<T>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid(
            "cannot compute the loss of an empty dataset".into(),
        ));
    }
    let mut total = 0.0;
    for batch in BatchIterator::<T>::new(samples, batch_size, 0, 0, false)? {
        let batch = batch?;
        let mut tape = Tape::new(Mode::Eval);
        let loss = record_loss(model, &mut tape, &batch)?;
        total += tape.value(loss).values()[0].as_f64() * batch.masks.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Hard labels from class probabilities: threshold 0.5 for one channel,
/// otherwise the first channel attaining the maximum.
pub fn probabilities_to_masks<T: Scalar>(probs: &Tensor<T>) -> Vec<LabelMask> {
    let s = probs.shape();
    let (c, plane) = (s.c(), s.plane());
    let v = probs.values();
    (0..s.n())
        .map(|n| {
            let base = n * c * plane;
            let labels = (0..plane)
                .map(|p| {
                    if c == 1 {
                        (v[base + p].as_f64() >= 0.5) as u8
                    } else {
                        let mut best = 0;
                        for k in 1..c {
                            if v[base + k * plane + p] > v[base + best * plane + p] {
                                best = k;
                            }
                        }
                        best as u8
                    }
                })
                .collect();
            LabelMask {
                height: s.h(),
                width: s.w(),
                labels,
            }
        })
        .collect()
}

pub fn predict_masks<T: Scalar>(
    model: &ModelGraph<T>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<LabelMask>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch::<T>(&refs)?;
        out.extend(probabilities_to_masks(&model.predict(&batch.images)?));
    }
    Ok(out)
}

/// Predicts every sample and pools confusion counts into one report.
pub fn evaluate_dataset<T: Scalar>(
    model: &ModelGraph<T>,
    samples: &[Sample],
    task: Task,
    batch_size: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let mut acc = MetricsAccumulator::new(task, model.config.n_classes.max(2))?;
    for (pred, s) in predict_masks(model, samples, batch_size)?
        .iter()
        .zip(samples)
    {
        acc.add(pred, &s.mask)?;
    }
    acc.finish()
}
