//! On-disk dataset layout:
//!
//! ```text
//! root/manifest.json        {"n_classes": 2, "label_values": [0, 1], "modalities": []}
//! root/images/<stem>.pgm    single modality, or
//! root/images/<stem>.<modality>.pgm   one file per declared modality
//! root/masks/<stem>.pgm     pixel value = class label
//! ```
//!
//! `manifest.json` may be omitted for a binary single-modality set.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    load_pgm, pad_mask, pad_to, resize_bilinear, resize_mask, save_pgm, GrayImage, Sample,
};
use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestFile {
    pub n_classes: usize,
    pub label_values: Vec<u8>,
    /// Channel order for multimodal sets; empty for single-modality images.
    pub modalities: Vec<String>,
}

impl Default for ManifestFile {
    fn default() -> Self {
        Self {
            n_classes: 2,
            label_values: vec![0, 1],
            modalities: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stem: String,
    pub images: Vec<PathBuf>,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub info: ManifestFile,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn in_channels(&self) -> usize {
        self.info.modalities.len().max(1)
    }
}

/// How loaded images reach the model resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Keep the stored size.
    #[default]
    None,
    /// Bilinear for images, nearest-neighbour for masks.
    Resize(usize),
    /// Zero padding at the bottom and right.
    Pad(usize),
}

pub fn load_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref().to_path_buf();
    let manifest_path = root.join("manifest.json");
    let info: ManifestFile = if manifest_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?
    } else {
        ManifestFile::default()
    };
    if info.n_classes == 0
        || info
            .label_values
            .iter()
            .any(|&l| l as usize >= info.n_classes.max(2))
    {
        return Err(Error::Config(format!(
            "manifest labels {:?} inconsistent with {} classes",
            info.label_values, info.n_classes
        )));
    }
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::MissingFile(images_dir));
    }
    let mut stems = BTreeSet::new();
    for entry in std::fs::read_dir(&images_dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let Some(base) = name.strip_suffix(".pgm") else {
            continue;
        };
        let stem = if info.modalities.is_empty() {
            Some(base)
        } else {
            info.modalities
                .iter()
                .find_map(|m| base.strip_suffix(&format!(".{m}")))
        };
        if let Some(stem) = stem {
            stems.insert(stem.to_string());
        }
    }
    let mut entries = Vec::with_capacity(stems.len());
    for stem in stems {
        let images: Vec<PathBuf> = if info.modalities.is_empty() {
            vec![images_dir.join(format!("{stem}.pgm"))]
        } else {
            info.modalities
                .iter()
                .map(|m| images_dir.join(format!("{stem}.{m}.pgm")))
                .collect()
        };
        if let Some(missing) = images.iter().find(|p| !p.exists()) {
            return Err(Error::MissingFile(missing.clone()));
        }
        let mask = root.join("masks").join(format!("{stem}.pgm"));
        if !mask.exists() {
            return Err(Error::MissingFile(mask));
        }
        entries.push(ManifestEntry { stem, images, mask });
    }
    Ok(DatasetManifest {
        root,
        info,
        entries,
    })
}

fn load_entry(m: &DatasetManifest, e: &ManifestEntry, pre: Preprocess) -> Result<Sample> {
    let planes: Vec<GrayImage> = e.images.iter().map(load_pgm).collect::<Result<_>>()?;
    let (w, h) = (planes[0].width, planes[0].height);
    if let Some((p, _)) = e
        .images
        .iter()
        .zip(&planes)
        .find(|(_, g)| (g.width, g.height) != (w, h))
    {
        return Err(Error::Invalid(format!(
            "{}: modality size differs from {w}×{h}",
            p.display()
        )));
    }
    let mask_img = load_pgm(&e.mask)?;
    if (mask_img.width, mask_img.height) != (w, h) {
        return Err(Error::Invalid(format!(
            "{}: mask size differs from image {w}×{h}",
            e.mask.display()
        )));
    }
    let labels: Vec<u8> = mask_img
        .pixels
        .iter()
        .map(|&p| {
            u8::try_from(p)
                .ok()
                .filter(|l| m.info.label_values.contains(l))
                .ok_or_else(|| {
                    Error::Invalid(format!(
                        "{}: label {p} not in {:?}",
                        e.mask.display(),
                        m.info.label_values
                    ))
                })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f32> = planes.iter().flat_map(GrayImage::normalized).collect();
    let mut image = Tensor::from_vec(Shape::new(1, planes.len(), h, w), values)?;
    let mut mask = LabelMask::new(h, w, labels)?;
    match pre {
        Preprocess::None => {}
        Preprocess::Resize(side) => {
            image = resize_bilinear(&image, side)?;
            mask = resize_mask(&mask, side)?;
        }
        Preprocess::Pad(side) => {
            image = pad_to(&image, side)?;
            mask = pad_mask(&mask, side)?;
        }
    }
    Sample::new(e.stem.clone(), image, mask)
}

/// Loads every manifest entry, scaling intensities by each file's maxval and
/// stacking modalities in manifest order.
pub fn load_samples(manifest: &DatasetManifest, pre: Preprocess) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .map(|e| load_entry(manifest, e, pre))
        .collect()
}

fn quantize(values: &[f32]) -> Vec<u16> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect()
}

/// Writes samples in the layout read by [`load_manifest`]: 16-bit images and
/// masks whose maxval is the largest class label.
pub fn write_dataset(
    root: impl AsRef<Path>,
    samples: &[Sample],
    n_classes: usize,
) -> Result<DatasetManifest> {
    let root = root.as_ref();
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let channels = samples.first().map_or(1, |s| s.image.shape().c());
    let modalities: Vec<String> = if channels > 1 {
        (0..channels).map(|c| format!("ch{c}")).collect()
    } else {
        Vec::new()
    };
    let info = ManifestFile {
        n_classes,
        label_values: (0..n_classes.max(2) as u8).collect(),
        modalities,
    };
    std::fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&info)?,
    )?;
    let maxval = (n_classes.max(2) - 1) as u16;
    for s in samples {
        let sh = s.image.shape();
        for (c, plane) in s.image.values().chunks(sh.plane()).enumerate() {
            let name = match info.modalities.get(c) {
                Some(m) => format!("{}.{m}.pgm", s.id),
                None => format!("{}.pgm", s.id),
            };
            save_pgm(
                &GrayImage::new(sh.w(), sh.h(), 65535, quantize(plane))?,
                root.join("images").join(name),
            )?;
        }
        let mask = GrayImage::new(
            s.mask.width,
            s.mask.height,
            maxval,
            s.mask.labels.iter().map(|&l| l as u16).collect(),
        )?;
        save_pgm(&mask, root.join("masks").join(format!("{}.pgm", s.id)))?;
    }
    load_manifest(root)
}
