//! Dataset-level aggregation (pooled counts) and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    binary_metrics, brats_regions, confusion_counts, BinaryMask, ConfusionCounts, LabelMask,
    RegionCounts,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Chaos,
    Brats,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "chaos" => Ok(Task::Chaos),
            "brats" => Ok(Task::Brats),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (binary|chaos|brats)"
            ))),
        }
    }
}

const BRATS_NOTE: &str = "region names follow these definitions: ET = labels {2,3} \
(all structures except edema), TC = label {3} (enhancing core only); standard BraTS naming has TC ⊇ ET";
const DICE_NOTE: &str = "dice_tn is computed from TN exactly as the published formula prints it; \
dice_tp is the conventional 2TP/(2TP+FN+FP)";
const BRATS_REGIONS: [&str; 3] = ["ET", "WT", "TC"];
const CHAOS_ORGANS: [&str; 4] = ["Liver", "Kidney L", "Kidney R", "Spleen"];

impl From<&ConfusionCounts> for RegionCounts {
    fn from(c: &ConfusionCounts) -> Self {
        RegionCounts {
            overlap: c.tp,
            predicted: c.tp + c.fp,
            truth: c.tp + c.fn_,
            both_negative: c.tn,
            truth_negative: c.tn + c.fp,
        }
    }
}

impl ConfusionCounts {
    /// Counts with `m` as prediction and `n` as ground truth.
    pub fn from_binary(m: &BinaryMask, n: &BinaryMask) -> Result<Self> {
        let r = RegionCounts::from_masks(m, n)?;
        Ok(ConfusionCounts {
            tp: r.overlap,
            fp: r.predicted - r.overlap,
            fn_: r.truth - r.overlap,
            tn: r.both_negative,
        })
    }
}

/// Pools confusion counts over a stream of `(prediction, truth)` pairs.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    task: Task,
    n_classes: usize,
    samples: usize,
    pixels: u64,
    correct: u64,
    /// Binary: `[foreground]`; chaos: classes `1..n`; brats: ET, WT, TC.
    counts: Vec<ConfusionCounts>,
}

impl MetricsAccumulator {
    pub fn new(task: Task, n_classes: usize) -> Result<Self> {
        let slots = match task {
            Task::Binary => {
                if n_classes > 2 {
                    return Err(Error::Config(format!(
                        "binary task with {n_classes} classes"
                    )));
                }
                1
            }
            Task::Chaos => {
                if n_classes < 2 {
                    return Err(Error::Config("chaos task needs at least 2 classes".into()));
                }
                n_classes - 1
            }
            Task::Brats => {
                if n_classes != 4 {
                    return Err(Error::Config(format!(
                        "brats task needs 4 classes, got {n_classes}"
                    )));
                }
                3
            }
        };
        Ok(Self {
            task,
            n_classes,
            samples: 0,
            pixels: 0,
            correct: 0,
            counts: vec![ConfusionCounts::default(); slots],
        })
    }

    pub fn add(&mut self, pred: &LabelMask, truth: &LabelMask) -> Result<()> {
        if let Some(&l) = truth
            .labels
            .iter()
            .find(|&&l| l as usize >= self.n_classes.max(2))
        {
            return Err(Error::Invalid(format!(
                "truth label {l} outside the {}-class set",
                self.n_classes
            )));
        }
        match self.task {
            Task::Binary => self.counts[0] += confusion_counts(pred, truth, 1)?,
            Task::Chaos => {
                for c in 1..self.n_classes {
                    self.counts[c - 1] += confusion_counts(pred, truth, c as u8)?;
                }
            }
            Task::Brats => {
                let (pw, pe, pt) = brats_regions(pred)?;
                let (tw, te, tt) = brats_regions(truth)?;
                self.counts[0] += ConfusionCounts::from_binary(&pe, &te)?;
                self.counts[1] += ConfusionCounts::from_binary(&pw, &tw)?;
                self.counts[2] += ConfusionCounts::from_binary(&pt, &tt)?;
            }
        }
        self.samples += 1;
        self.pixels += truth.len() as u64;
        self.correct += pred
            .labels
            .iter()
            .zip(&truth.labels)
            .filter(|(a, b)| a == b)
            .count() as u64;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.samples == 0 {
            return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
        }
        let pct = |v: Option<f64>| v.map(|x| 100.0 * x);
        let mut entries = Vec::new();
        let mut notes = Vec::new();
        match self.task {
            Task::Binary => {
                let m = binary_metrics(&self.counts[0]);
                let metrics = m
                    .named()
                    .iter()
                    .map(|&(k, v)| (k.to_string(), pct(v)))
                    .collect();
                entries.push(ReportEntry {
                    scope: "foreground".into(),
                    counts: self.counts[0],
                    metrics,
                });
                notes.push(DICE_NOTE.to_string());
            }
            Task::Chaos => {
                let mut pooled = ConfusionCounts::default();
                for (i, c) in self.counts.iter().enumerate() {
                    pooled += *c;
                    entries.push(region_entry(class_name(self.n_classes, i + 1), c, true));
                }
                let mut overall = region_entry("overall".into(), &pooled, false);
                overall.metrics.insert(
                    "pixel_accuracy".into(),
                    Some(100.0 * self.correct as f64 / self.pixels as f64),
                );
                entries.push(overall);
                notes.push(
                    "per-class columns report one-vs-rest accuracy and Dice*; overall Sens*/Spec*/Dice* pool the \
                     one-vs-rest counts of every foreground class"
                        .to_string(),
                );
            }
            Task::Brats => {
                for (name, c) in BRATS_REGIONS.iter().zip(&self.counts) {
                    entries.push(region_entry(name.to_string(), c, false));
                }
                notes.push(BRATS_NOTE.to_string());
            }
        }
        Ok(MetricsReport {
            task: self.task,
            samples: self.samples,
            pixels: self.pixels,
            entries,
            notes,
        })
    }
}

fn class_name(n_classes: usize, c: usize) -> String {
    if n_classes == 5 {
        CHAOS_ORGANS[c - 1].to_string()
    } else {
        format!("class {c}")
    }
}

fn region_entry(scope: String, c: &ConfusionCounts, with_accuracy: bool) -> ReportEntry {
    let r = RegionCounts::from(c).metrics();
    let pct = |v: Option<f64>| v.map(|x| 100.0 * x);
    let mut metrics = BTreeMap::new();
    metrics.insert("dice_star".to_string(), pct(r.dice));
    metrics.insert("sens_star".to_string(), pct(r.sens));
    metrics.insert("spec_star".to_string(), pct(r.spec));
    if with_accuracy {
        metrics.insert("accuracy".to_string(), pct(binary_metrics(c).accuracy));
    }
    ReportEntry {
        scope,
        counts: *c,
        metrics,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub scope: String,
    pub counts: ConfusionCounts,
    /// Percentages; `null` where undefined.
    pub metrics: BTreeMap<String, Option<f64>>,
}

impl ReportEntry {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied().flatten()
    }
}

/// Aggregated metrics of one evaluation run.
///
/// JSON schema: `{"task", "samples", "pixels", "entries": [{"scope", "counts":
/// {"tp","fp","tn","fn"}, "metrics": {name: percent|null}}], "notes": [..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub samples: usize,
    pub pixels: u64,
    pub entries: Vec<ReportEntry>,
    pub notes: Vec<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{x:.2}"))
}

impl MetricsReport {
    pub fn entry(&self, scope: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.scope == scope)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table in the layout of the published result tables.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, cells: &[String]| {
            let line: Vec<String> = cells.iter().map(|c| format!("{c:>10}")).collect();
            let _ = writeln!(s, "{}", line.join(" ").trim_end());
        };
        match self.task {
            Task::Binary => {
                let e = &self.entries[0];
                let keys = [
                    "accuracy",
                    "precision",
                    "f_measure",
                    "sensitivity",
                    "specificity",
                    "dice_tn",
                    "dice_tp",
                ];
                let heads = ["Acc", "P", "F", "Sen", "Spec", "Dice", "Dice(TP)"];
                row(&mut s, &heads.map(String::from));
                row(&mut s, &keys.map(|k| cell(e.get(k))));
            }
            Task::Chaos => {
                let classes = &self.entries[..self.entries.len() - 1];
                let overall = self.entries.last().expect("overall entry");
                let _ = writeln!(s, "per-class accuracy / Dice*");
                let mut head: Vec<String> = classes.iter().map(|e| e.scope.clone()).collect();
                head.extend(["Sens*", "Spec*", "Dice*"].map(String::from));
                row(&mut s, &head);
                let mut acc: Vec<String> =
                    classes.iter().map(|e| cell(e.get("accuracy"))).collect();
                acc.extend(["sens_star", "spec_star", "dice_star"].map(|k| cell(overall.get(k))));
                row(&mut s, &acc);
                let mut dice: Vec<String> =
                    classes.iter().map(|e| cell(e.get("dice_star"))).collect();
                dice.extend(std::iter::repeat_n(String::new(), 3));
                row(&mut s, &dice);
                let _ = writeln!(s, "pixel accuracy {}", cell(overall.get("pixel_accuracy")));
            }
            Task::Brats => {
                let mut group = vec![String::new(); 9];
                group[0] = "Dice*".into();
                group[3] = "Sens*".into();
                group[6] = "Spec*".into();
                row(&mut s, &group);
                let heads: Vec<String> = [BRATS_REGIONS; 3]
                    .concat()
                    .into_iter()
                    .map(String::from)
                    .collect();
                row(&mut s, &heads);
                let mut vals = Vec::new();
                for key in ["dice_star", "sens_star", "spec_star"] {
                    for r in BRATS_REGIONS {
                        vals.push(cell(self.entry(r).and_then(|e| e.get(key))));
                    }
                }
                row(&mut s, &vals);
            }
        }
        let _ = writeln!(s, "samples {}  pixels {}", self.samples, self.pixels);
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
