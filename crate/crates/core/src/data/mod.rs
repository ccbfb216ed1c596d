//! Image ingestion, preprocessing, splitting, batching and synthetic data.

mod manifest;
mod pgm;
mod synth;

pub use manifest::{
    load_manifest, load_samples, write_dataset, DatasetManifest, ManifestEntry, ManifestFile,
    Preprocess,
};
pub use pgm::{load_pgm, parse_pgm, save_pgm, GrayImage};
pub use synth::synth_dataset;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::resize_bilinear_forward;
use crate::metrics::LabelMask;
use crate::tensor::{Scalar, Shape, Tensor};

/// One image with its ground-truth mask; the image has shape `(1, C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: LabelMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: LabelMask) -> Result<Self> {
        let s = image.shape();
        if s.n() != 1 || (s.h(), s.w()) != (mask.height, mask.width) {
            return Err(Error::Invalid(format!(
                "image {s} does not match a {}×{} mask",
                mask.height, mask.width
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn side(&self) -> usize {
        self.mask.height
    }
}

/// Bilinear resize of every channel to `side × side`.
pub fn resize_bilinear(image: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    if side == 0 {
        return Err(Error::Invalid("resize target must be positive".into()));
    }
    let s = image.shape();
    if (s.h(), s.w()) == (side, side) {
        return Ok(image.clone());
    }
    Tensor::from_vec(
        s.with_hw(side, side),
        resize_bilinear_forward(image.values(), s, side, side),
    )
}

/// Nearest-neighbour resize (pixel-centre sampling), so no new labels appear.
pub fn resize_mask(mask: &LabelMask, side: usize) -> Result<LabelMask> {
    if side == 0 {
        return Err(Error::Invalid("resize target must be positive".into()));
    }
    let pick = |o: usize, inp: usize| {
        (((o as f64 + 0.5) * inp as f64 / side as f64) as usize).min(inp - 1)
    };
    let mut labels = Vec::with_capacity(side * side);
    for i in 0..side {
        let si = pick(i, mask.height);
        for j in 0..side {
            labels.push(mask.get(si, pick(j, mask.width)));
        }
    }
    LabelMask::new(side, side, labels)
}

fn pad_plane<V: Copy>(src: &[V], h: usize, w: usize, side: usize, fill: V) -> Vec<V> {
    let mut out = vec![fill; side * side];
    for i in 0..h {
        out[i * side..i * side + w].copy_from_slice(&src[i * w..(i + 1) * w]);
    }
    out
}

/// Zero-pads to `side × side`, keeping the source at the top-left corner.
pub fn pad_to<T: Scalar>(image: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.h() > side || s.w() > side {
        return Err(Error::Invalid(format!(
            "cannot pad {}×{} down to {side}×{side}",
            s.h(),
            s.w()
        )));
    }
    let mut out = Vec::with_capacity(s.n() * s.c() * side * side);
    for plane in image.values().chunks(s.plane().max(1)) {
        out.extend(pad_plane(plane, s.h(), s.w(), side, T::zero()));
    }
    Tensor::from_vec(s.with_hw(side, side), out)
}

/// Pads a mask with background label 0.
pub fn pad_mask(mask: &LabelMask, side: usize) -> Result<LabelMask> {
    if mask.height > side || mask.width > side {
        return Err(Error::Invalid(format!(
            "cannot pad {}×{} down to {side}×{side}",
            mask.height, mask.width
        )));
    }
    LabelMask::new(
        side,
        side,
        pad_plane(&mask.labels, mask.height, mask.width, side, 0),
    )
}

/// Seeded shuffle followed by a `train:test` split; the training side takes the
/// rounding remainder.
pub fn split_dataset<I: Clone>(
    items: &[I],
    ratio: (usize, usize),
    seed: u64,
) -> Result<(Vec<I>, Vec<I>)> {
    if items.is_empty() {
        return Err(Error::Invalid("cannot split an empty dataset".into()));
    }
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(Error::Config(format!(
            "split ratio {a}:{b} must be positive"
        )));
    }
    let n = items.len();
    let n_train = (n * a).div_ceil(a + b);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Stacked images, masks and ids of consecutive samples.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub masks: Vec<LabelMask>,
    pub ids: Vec<String>,
}

/// Sample order for one epoch: shuffled under `(seed, epoch)`, or identity when `shuffle` is off.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Batches of `batch_size` samples in epoch order; the final batch may be short.
pub struct BatchIterator<'a, T> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar> BatchIterator<'a, T> {
    pub fn new(
        samples: &'a [Sample],
        batch_size: usize,
        seed: u64,
        epoch: u64,
        shuffle: bool,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(Self {
            samples,
            order: epoch_order(samples.len(), seed, epoch, shuffle),
            batch_size,
            pos: 0,
            _scalar: std::marker::PhantomData,
        })
    }
}

impl<T: Scalar> Iterator for BatchIterator<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let picked: Vec<&Sample> = self.order[self.pos..end]
            .iter()
            .map(|&i| &self.samples[i])
            .collect();
        self.pos = end;
        Some(make_batch(&picked))
    }
}

pub fn make_batch<T: Scalar>(samples: &[&Sample]) -> Result<Batch<T>> {
    let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image.cast()).collect();
    let refs: Vec<&Tensor<T>> = images.iter().collect();
    Ok(Batch {
        images: Tensor::stack(&refs)?,
        masks: samples.iter().map(|s| s.mask.clone()).collect(),
        ids: samples.iter().map(|s| s.id.clone()).collect(),
    })
}

/// Convenience constructor for [`BatchIterator`].
pub fn batch_iterator<T: Scalar>(
    samples: &[Sample],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIterator<'_, T>> {
    BatchIterator::new(samples, batch_size, seed, epoch, true)
}

/// Single-channel image tensor from row-major intensities.
pub fn image_tensor(height: usize, width: usize, values: Vec<f32>) -> Result<Tensor<f32>> {
    Tensor::from_vec(Shape::new(1, 1, height, width), values)
}
