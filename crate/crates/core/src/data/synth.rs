//! Seeded synthetic segmentation data: noisy canvases with labelled shapes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::tensor::{Shape, Tensor};

const MAX_ATTEMPTS: u64 = 64;
const NOISE_STD: f32 = 0.04;
const BACKGROUND: f32 = 0.1;

fn paint_shape(rng: &mut ChaCha8Rng, side: usize, labels: &mut [u8], class: u8) {
    let s = side as f64;
    let (ry, rx) = (
        rng.gen_range(s / 14.0..s / 5.0),
        rng.gen_range(s / 14.0..s / 5.0),
    );
    let (cy, cx) = (rng.gen_range(ry..s - ry), rng.gen_range(rx..s - rx));
    let ellipse = rng.gen_bool(0.5);
    for i in 0..side {
        let dy = (i as f64 + 0.5 - cy) / ry;
        for j in 0..side {
            let dx = (j as f64 + 0.5 - cx) / rx;
            let inside = if ellipse {
                dx * dx + dy * dy <= 1.0
            } else {
                dx.abs() <= 1.0 && dy.abs() <= 1.0
            };
            if inside {
                labels[i * side + j] = class;
            }
        }
    }
}

fn one_sample(seed: u64, index: u64, side: usize, n_classes: usize) -> (Vec<f32>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let noise = Normal::new(0.0f32, NOISE_STD).expect("valid std");
    let mut labels = vec![0u8; side * side];
    for attempt in 0..MAX_ATTEMPTS {
        labels.fill(0);
        for class in 1..n_classes {
            for _ in 0..rng.gen_range(1..=4) {
                paint_shape(&mut rng, side, &mut labels, class as u8);
            }
        }
        let mut present = vec![false; n_classes];
        labels.iter().for_each(|&l| present[l as usize] = true);
        if present.iter().all(|&p| p) || attempt + 1 == MAX_ATTEMPTS {
            break;
        }
    }
    let span = (n_classes - 1).max(1) as f32;
    let image = labels
        .iter()
        .map(|&l| {
            let level = if l == 0 {
                BACKGROUND
            } else {
                0.3 + 0.6 * (l as f32 - 1.0) / span.max(1.0)
            };
            (level + noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();
    (image, labels)
}

/// `n_samples` single-channel images of side `side` whose masks use labels
/// `0..n_classes`. Each sample depends only on `(seed, index)`; shapes are
/// redrawn until every class is visible.
pub fn synth_dataset(
    seed: u64,
    n_samples: usize,
    side: usize,
    n_classes: usize,
) -> Result<Vec<Sample>> {
    if !(2..=255).contains(&n_classes) {
        return Err(Error::Config(format!(
            "synthetic data needs 2..=255 classes, got {n_classes}"
        )));
    }
    if side < 8 {
        return Err(Error::Config(format!(
            "synthetic side {side} is below the minimum of 8"
        )));
    }
    (0..n_samples)
        .map(|i| {
            let (image, labels) = one_sample(seed, i as u64, side, n_classes);
            Sample::new(
                format!("synth_{i:04}"),
                Tensor::from_vec(Shape::new(1, 1, side, side), image)?,
                LabelMask::new(side, side, labels)?,
            )
        })
        .collect()
}
