//! Structural audit: per-layer shapes and parameter counts.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::graph::{LayerKind, LayerRecord, ShapeTracer};
use crate::model::network::{CrossFusion, ModelGraph};
use crate::tensor::{Scalar, Shape};

/// Parameter count the published model reports.
pub const REFERENCE_PARAMETERS: usize = 6_800_000;

#[derive(Clone, Debug, Serialize)]
pub struct AuditRow {
    pub name: String,
    pub kind: LayerKind,
    pub input_shapes: Vec<Shape>,
    pub output_shape: Shape,
    pub params: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossAdd {
    pub entry: CrossFusion,
    pub decoder_shape: Shape,
    pub encoder_shape: Shape,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeAuditReport {
    pub rows: Vec<AuditRow>,
    pub total_params: usize,
    pub encoder_concat: Vec<Shape>,
    pub encoder_pooled: Vec<Shape>,
    pub integration_output: Option<Shape>,
    pub integration_pools: Vec<usize>,
    pub decoder_outputs: Vec<Shape>,
    pub cross_adds: Vec<CrossAdd>,
    pub output: Shape,
}

impl ShapeAuditReport {
    pub fn cross_adds_legal(&self) -> bool {
        self.cross_adds
            .iter()
            .all(|c| c.decoder_shape == c.encoder_shape)
    }

    /// Sum of the per-layer parameter column.
    pub fn row_param_sum(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    /// Per-group parameter subtotals keyed by the layer-name prefix (`enc1`, `integ`, `dec3`, ...).
    pub fn group_totals(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for r in &self.rows {
            let group = r.name.split('.').next().unwrap_or("").to_string();
            match out.iter_mut().find(|(g, _)| *g == group) {
                Some((_, n)) => *n += r.params,
                None => out.push((group, r.params)),
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:<11} {:<44} {:<20} {:>12}",
            "layer", "kind", "input", "output", "params"
        );
        for r in &self.rows {
            let inputs: Vec<String> = r.input_shapes.iter().map(Shape::to_string).collect();
            let _ = writeln!(
                s,
                "{:<28} {:<11} {:<44} {:<20} {:>12}",
                r.name,
                format!("{:?}", r.kind).to_lowercase(),
                inputs.join(" + "),
                r.output_shape.to_string(),
                r.params
            );
        }
        let _ = writeln!(s);
        for (g, n) in self.group_totals() {
            if n > 0 {
                let _ = writeln!(s, "subtotal {g:<12} {n:>12}");
            }
        }
        let _ = writeln!(s, "total parameters {:>12}", self.total_params);
        let _ = writeln!(
            s,
            "reference {:>19}  ratio {:.3}",
            REFERENCE_PARAMETERS,
            self.total_params as f64 / REFERENCE_PARAMETERS as f64
        );
        s
    }
}

fn row(l: &LayerRecord) -> AuditRow {
    AuditRow {
        name: l.name.clone(),
        kind: l.kind,
        input_shapes: l.input_shapes.clone(),
        output_shape: l.output_shape,
        params: l.params,
    }
}

/// Traces `model` at `input` and tabulates every layer.
pub fn shape_audit<T: Scalar>(model: &ModelGraph<T>, input: Shape) -> Result<ShapeAuditReport> {
    let mut g = ShapeTracer::new();
    let x = g.input(input);
    let st = model.build_stages(&mut g, x)?;
    let shape = |v: usize| g.layers[v].output_shape;
    let adds: Vec<&LayerRecord> = g
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Add)
        .collect();
    let cross_adds = model
        .cross_fusion()
        .iter()
        .zip(&adds)
        .map(|(entry, l)| CrossAdd {
            entry: *entry,
            decoder_shape: l.input_shapes[0],
            encoder_shape: l.input_shapes[1],
        })
        .collect();
    let report = ShapeAuditReport {
        rows: g
            .layers
            .iter()
            .filter(|l| l.kind != LayerKind::Input)
            .map(row)
            .collect(),
        total_params: model.parameter_count(),
        encoder_concat: st.encoder.iter().map(|e| shape(e.concat)).collect(),
        encoder_pooled: st.encoder.iter().map(|e| shape(e.pooled)).collect(),
        integration_output: st.integration.map(shape),
        integration_pools: g
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::MaxPool && l.name.starts_with("integ."))
            .map(|l| l.size)
            .collect(),
        decoder_outputs: st.decoder.iter().map(|&v| shape(v)).collect(),
        cross_adds,
        output: shape(st.output),
    };
    Ok(report)
}

/// Total learnable scalars of `model`.
pub fn parameter_count<T: Scalar>(model: &ModelGraph<T>) -> usize {
    model.parameter_count()
}
