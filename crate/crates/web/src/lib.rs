//! Browser bindings for three small MC-Net demonstrations.
//!
//! Every export returns a JSON string so the page needs no generated glue
//! beyond `wasm-bindgen`'s. The plain-Rust functions underneath are what the
//! host tests exercise.

use mcnet::data::synth_dataset;
use mcnet::kernels::max_pool_forward;
use mcnet::metrics::region_metrics;
use mcnet::model::audit::REFERENCE_PARAMETERS;
use mcnet::model::{
    assemble_model, predict_masks, shape_audit, train_epoch, ModelConfig, Strategy, TrainOptions,
};
use mcnet::optim::AdamConfig;
use mcnet::{Error, Result, Shape};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Side of the demo images; small enough to train in a browser tab.
pub const DEMO_SIDE: usize = 32;

#[derive(Debug, Serialize)]
pub struct Segmentation {
    pub side: usize,
    /// Grey levels 0–255, row major.
    pub image: Vec<u8>,
    pub truth: Vec<u8>,
    pub prediction: Vec<u8>,
    pub losses: Vec<f64>,
    /// Overlap of predicted and true foreground; `None` when both are empty.
    pub dice: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct PoolLevel {
    pub pool: usize,
    pub side: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Serialize)]
pub struct AuditSummary {
    pub depth: usize,
    pub strategy: String,
    pub total: usize,
    pub reference: usize,
    pub groups: Vec<(String, usize)>,
}

fn grey(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Trains a depth-2 model on eight synthetic images for `epochs` epochs and
/// segments the first one.
pub fn segment(seed: u64, epochs: usize) -> Result<Segmentation> {
    let samples = synth_dataset(seed, 8, DEMO_SIDE, 2)?;
    let cfg = ModelConfig {
        seed,
        ..ModelConfig::scaled(2, 6, DEMO_SIDE)?
    };
    let mut model = assemble_model::<f32>(&cfg)?;
    let opts = TrainOptions {
        adam: AdamConfig::with_lr(3e-3),
        batch_size: 4,
        seed,
        shuffle: true,
    };
    let mut losses = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let l = train_epoch(&mut model, &samples, &opts, e as u64)?;
        losses.push(l.iter().sum::<f64>() / l.len() as f64);
    }
    let first = &samples[..1];
    let pred = predict_masks(&model, first, 1)?.remove(0);
    let truth = &first[0].mask;
    let dice = region_metrics(&pred.select(|l| l == 1), &truth.select(|l| l == 1))?.dice;
    Ok(Segmentation {
        side: DEMO_SIDE,
        image: first[0].image.values().iter().copied().map(grey).collect(),
        truth: truth.labels.iter().map(|&l| l * 255).collect(),
        prediction: pred.labels.iter().map(|&l| l * 255).collect(),
        losses,
        dice,
    })
}

/// Max-pools one synthetic image by successive powers of two, the way the
/// integration branches summarise their inputs.
pub fn pyramid(seed: u64, side: usize) -> Result<Vec<PoolLevel>> {
    if side < 2 || !side.is_power_of_two() || side > 256 {
        return Err(Error::Config(format!(
            "side {side} must be a power of two in 2..=256"
        )));
    }
    let image = synth_dataset(seed, 1, side, 3)?.remove(0).image;
    let shape = Shape::new(1, 1, side, side);
    let mut levels = Vec::new();
    let mut pool = 1;
    while pool <= side {
        let (out, _) = max_pool_forward(image.values(), shape, pool);
        levels.push(PoolLevel {
            pool,
            side: side / pool,
            pixels: out.into_iter().map(grey).collect(),
        });
        pool *= 2;
    }
    Ok(levels)
}

/// Parameter totals of a published-width model truncated to `depth`.
pub fn audit(depth: usize, strategy: &str) -> Result<AuditSummary> {
    let s: Strategy = strategy.parse()?;
    let model = assemble_model::<f32>(&ModelConfig::published_depth(depth)?.with_strategy(s))?;
    let report = shape_audit(&model, model.input_shape(1))?;
    Ok(AuditSummary {
        depth,
        strategy: s.label().to_string(),
        total: report.total_params,
        reference: REFERENCE_PARAMETERS,
        groups: report.group_totals(),
    })
}

fn to_js<S: Serialize>(r: Result<S>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| Error::Config(e.to_string())))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = segmentSynthetic)]
pub fn segment_synthetic(seed: u32, epochs: u32) -> std::result::Result<String, JsValue> {
    to_js(segment(seed as u64, epochs.min(200) as usize))
}

#[wasm_bindgen(js_name = poolingPyramid)]
pub fn pooling_pyramid(seed: u32, side: u32) -> std::result::Result<String, JsValue> {
    to_js(pyramid(seed as u64, side as usize))
}

#[wasm_bindgen(js_name = parameterAudit)]
pub fn parameter_audit(depth: u32, strategy: &str) -> std::result::Result<String, JsValue> {
    to_js(audit(depth as usize, strategy))
}
