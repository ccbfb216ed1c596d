//! Segmentation metrics: confusion-count rates, region overlap scores and
//! tumour-region decomposition, plus dataset-level aggregation and reporting.
//!
//! Rates are fractions in `[0, 1]`; reports scale them to percentages. A rate
//! whose denominator is zero is `None` ("undefined"), never 0 or 1.

mod report;

pub use report::{MetricsAccumulator, MetricsReport, ReportEntry, Task};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel integer class labels of one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Invalid(format!(
                "{} labels for a {height}×{width} mask",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.width + j]
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// `true` where `pred(label)` holds.
    pub fn select(&self, pred: impl Fn(u8) -> bool) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| pred(l)).collect(),
        }
    }

    fn check_same(&self, other: &LabelMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Invalid(format!(
                "mask shapes differ: {}×{} vs {}×{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts with positive and negative classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// One-vs-rest counts for `positive`.
pub fn confusion_counts(
    pred: &LabelMask,
    truth: &LabelMask,
    positive: u8,
) -> Result<ConfusionCounts> {
    pred.check_same(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        match (p == positive, t == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Confusion-count rates. `dice_tn` uses true negatives exactly as the
/// published formula is printed; `dice_tp` is the conventional overlap form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BinaryMetrics {
    pub precision: Option<f64>,
    pub f_measure: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub dice_tn: Option<f64>,
    pub dice_tp: Option<f64>,
}

pub fn binary_metrics(c: &ConfusionCounts) -> BinaryMetrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let sensitivity = ratio(tp, tp + fn_);
    let f_measure = match (precision, sensitivity) {
        (Some(p), Some(r)) => ratio(2.0 * p * r, p + r),
        _ => None,
    };
    BinaryMetrics {
        precision,
        f_measure,
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        sensitivity,
        specificity: ratio(tn, tn + fp),
        dice_tn: ratio(2.0 * tn, 2.0 * tn + fn_ + fp),
        dice_tp: ratio(2.0 * tp, 2.0 * tp + fn_ + fp),
    }
}

impl BinaryMetrics {
    /// `(key, value)` pairs in the fixed report order.
    pub fn named(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("f_measure", self.f_measure),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("dice_tn", self.dice_tn),
            ("dice_tp", self.dice_tp),
        ]
    }
}

/// Set sizes behind the region scores; additive across images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    /// |M₁ ∧ N₁|
    pub overlap: u64,
    /// |M₁|
    pub predicted: u64,
    /// |N₁|
    pub truth: u64,
    /// |M₀ ∧ N₀|
    pub both_negative: u64,
    /// |N₀|
    pub truth_negative: u64,
}

impl std::ops::AddAssign for RegionCounts {
    fn add_assign(&mut self, o: Self) {
        self.overlap += o.overlap;
        self.predicted += o.predicted;
        self.truth += o.truth;
        self.both_negative += o.both_negative;
        self.truth_negative += o.truth_negative;
    }
}

impl RegionCounts {
    /// `m` is the prediction, `n` the ground truth.
    pub fn from_masks(m: &BinaryMask, n: &BinaryMask) -> Result<Self> {
        if (m.height, m.width) != (n.height, n.width) {
            return Err(Error::Invalid(format!(
                "mask shapes differ: {}×{} vs {}×{}",
                m.height, m.width, n.height, n.width
            )));
        }
        let mut c = RegionCounts::default();
        for (&a, &b) in m.bits.iter().zip(&n.bits) {
            c.overlap += (a && b) as u64;
            c.predicted += a as u64;
            c.truth += b as u64;
            c.both_negative += (!a && !b) as u64;
            c.truth_negative += (!b) as u64;
        }
        Ok(c)
    }

    pub fn metrics(&self) -> RegionMetrics {
        let o = self.overlap as f64;
        RegionMetrics {
            dice: ratio(o, (self.predicted + self.truth) as f64 / 2.0),
            sens: ratio(o, self.truth as f64),
            spec: ratio(self.both_negative as f64, self.truth_negative as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub dice: Option<f64>,
    pub sens: Option<f64>,
    pub spec: Option<f64>,
}

/// Overlap scores of prediction `m` against ground truth `n`.
pub fn region_metrics(m: &BinaryMask, n: &BinaryMask) -> Result<RegionMetrics> {
    Ok(RegionCounts::from_masks(m, n)?.metrics())
}

/// Tumour regions as `(WT, ET, TC)`: labels {1,2,3}, {2,3} and {3}.
///
/// WT covers every tumour structure, ET every structure except edema (label 1)
/// and TC only the enhancing core (label 3), so TC ⊆ ET ⊆ WT.
pub fn brats_regions(labels: &LabelMask) -> Result<(BinaryMask, BinaryMask, BinaryMask)> {
    if let Some(&bad) = labels.labels.iter().find(|&&l| l > 3) {
        return Err(Error::Invalid(format!("tumour label {bad} outside 0..=3")));
    }
    Ok((
        labels.select(|l| l >= 1),
        labels.select(|l| l >= 2),
        labels.select(|l| l == 3),
    ))
}
