use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mcnet::data::{
    load_manifest, load_pgm, load_samples, save_pgm, split_dataset, synth_dataset, write_dataset,
    GrayImage, Preprocess, Sample,
};
use mcnet::model::train::probabilities_to_masks;
use mcnet::model::{
    assemble_model, eval_loss, evaluate_dataset, load_checkpoint, save_checkpoint, shape_audit,
    train_epoch, ModelConfig, ModelGraph, Strategy, TrainOptions,
};
use mcnet::{Error, Result, Shape, Tensor};

use crate::config::{head_classes, RunConfig};

pub const CHECKPOINT: &str = "model.mcnt";

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

/// Loads or generates the dataset and fits the model's data-dependent fields.
fn load_data(cfg: &mut RunConfig) -> Result<Vec<Sample>> {
    match &cfg.data.root {
        None => {
            let s = &cfg.data.synth;
            synth_dataset(cfg.seed, s.n_samples, s.side, s.n_classes)
        }
        Some(root) => {
            let manifest = load_manifest(root)?;
            let samples = load_samples(&manifest, cfg.data.preprocess)?;
            let first = samples
                .first()
                .ok_or_else(|| Error::Invalid(format!("{}: no samples", root.display())))?;
            cfg.model.in_channels = manifest.in_channels();
            cfg.model.n_classes = head_classes(manifest.info.n_classes);
            cfg.model.input_size = match cfg.data.preprocess {
                Preprocess::Resize(s) | Preprocess::Pad(s) => s,
                Preprocess::None => first.side(),
            };
            Ok(samples)
        }
    }
}

fn split(cfg: &RunConfig, samples: &[Sample]) -> Result<(Vec<Sample>, Vec<Sample>)> {
    split_dataset(samples, cfg.data.split, cfg.seed)
}

pub fn train(mut cfg: RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let samples = load_data(&mut cfg)?;
    let (train, test) = split(&cfg, &samples)?;
    write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;

    let mut model = assemble_model::<f32>(&cfg.model)?;
    let opts = TrainOptions {
        adam: cfg.optimizer,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        shuffle: true,
    };
    let mut csv = String::from("epoch,train_loss,test_loss\n");
    let checkpoint = out.join(CHECKPOINT);
    for epoch in 0..cfg.epochs {
        let losses = match train_epoch(&mut model, &train, &opts, epoch) {
            Ok(l) => l,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                save_checkpoint(&model, &checkpoint)?;
                write(
                    out.join(format!("{CHECKPOINT}.aborted")),
                    format!("epoch {}: {e}\n", epoch + 1),
                )?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let test_loss = if test.is_empty() {
            f64::NAN
        } else {
            eval_loss(&model, &test, cfg.batch_size)?
        };
        let _ = writeln!(csv, "{},{train_loss},{test_loss}", epoch + 1);
        write(out.join("loss.csv"), &csv)?;
        println!(
            "epoch {:>4}  train {train_loss:.6}  test {test_loss:.6}",
            epoch + 1
        );
    }
    write(out.join("loss.csv"), &csv)?;
    save_checkpoint(&model, &checkpoint)?;
    println!("wrote {}", checkpoint.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

/// `file_config` is set when the user supplied `--config`; its model section
/// must then agree with the checkpoint.
pub fn eval(
    mut cfg: RunConfig,
    file_config: bool,
    checkpoint: &Path,
    which: SplitChoice,
    out: &Path,
) -> Result<()> {
    let model = load_checkpoint::<f32>(checkpoint)?;
    if cfg.data.root.is_none() && !file_config {
        cfg.data.synth.side = model.config.input_size;
        if model.config.n_classes > 1 {
            cfg.data.synth.n_classes = model.config.n_classes;
        }
    }
    let samples = load_data(&mut cfg)?;
    if file_config {
        check_model_matches(&cfg.model, &model.config)?;
    }
    let (train, test) = split(&cfg, &samples)?;
    let chosen = match which {
        SplitChoice::Train => train,
        SplitChoice::Test => test,
        SplitChoice::All => samples,
    };
    let report = evaluate_dataset(&model, &chosen, cfg.task, cfg.batch_size)?;
    fs::create_dir_all(out)?;
    write(out.join("metrics.json"), report.to_json()? + "\n")?;
    let table = report.render_table();
    write(out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn check_model_matches(want: &ModelConfig, got: &ModelConfig) -> Result<()> {
    if want == got {
        return Ok(());
    }
    let a = serde_json::to_value(want)?;
    let b = serde_json::to_value(got)?;
    let fields: Vec<String> = match (a.as_object(), b.as_object()) {
        (Some(a), Some(b)) => a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect(),
        _ => Vec::new(),
    };
    Err(Error::Config(format!(
        "checkpoint model differs from the configuration in: {}",
        fields.join(", ")
    )))
}

fn load_image(paths: &[PathBuf], model: &ModelGraph<f32>) -> Result<Tensor<f32>> {
    let planes: Vec<GrayImage> = paths.iter().map(load_pgm).collect::<Result<_>>()?;
    let cfg = &model.config;
    if planes.len() != cfg.in_channels {
        return Err(Error::Config(format!(
            "model expects {} modality images, got {}",
            cfg.in_channels,
            planes.len()
        )));
    }
    let side = cfg.input_size;
    for (p, g) in paths.iter().zip(&planes) {
        if (g.width, g.height) != (side, side) {
            return Err(Error::Config(format!(
                "{} is {}×{}; the model requires {side}×{side}",
                p.display(),
                g.width,
                g.height
            )));
        }
    }
    let values = planes.iter().flat_map(GrayImage::normalized).collect();
    Tensor::from_vec(Shape::new(1, planes.len(), side, side), values)
}

pub fn predict(checkpoint: &Path, images: &[PathBuf], vis: bool, out: &Path) -> Result<()> {
    let model = load_checkpoint::<f32>(checkpoint)?;
    let x = load_image(images, &model)?;
    let mask = probabilities_to_masks(&model.predict(&x)?).remove(0);
    let top = model.config.n_classes.max(2) - 1;
    let stem = images[0]
        .file_stem()
        .map(|s| {
            s.to_string_lossy()
                .split('.')
                .next()
                .unwrap_or("image")
                .to_string()
        })
        .unwrap_or_else(|| "image".into());
    fs::create_dir_all(out)?;
    let labels: Vec<u16> = mask.labels.iter().map(|&l| l as u16).collect();
    let path = out.join(format!("{stem}.mask.pgm"));
    save_pgm(
        &GrayImage::new(mask.width, mask.height, top as u16, labels.clone())?,
        &path,
    )?;
    println!("wrote {}", path.display());
    if vis {
        let scaled = labels
            .iter()
            .map(|&l| (l as usize * 255 / top) as u16)
            .collect();
        let path = out.join(format!("{stem}.vis.pgm"));
        save_pgm(
            &GrayImage::new(mask.width, mask.height, 255, scaled)?,
            &path,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn total_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(assemble_model::<f32>(cfg)?.parameter_count())
}

pub fn audit(cfg: RunConfig, out: &Path) -> Result<()> {
    let model = assemble_model::<f32>(&cfg.model)?;
    let report = shape_audit(&model, model.input_shape(1))?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "depth {}  input {}  strategy {}\n",
        cfg.model.depth,
        cfg.model.input_size,
        cfg.model.strategy().label()
    );
    s.push_str(&report.render());
    let _ = writeln!(s, "\nencoder pooled outputs:");
    for (i, sh) in report.encoder_pooled.iter().enumerate() {
        let _ = writeln!(s, "  enc{} {sh}", i + 1);
    }
    if let Some(sh) = report.integration_output {
        let _ = writeln!(
            s,
            "integration output {sh}  pools {:?}",
            report.integration_pools
        );
    }
    let _ = writeln!(s, "decoder outputs:");
    for (i, sh) in report.decoder_outputs.iter().enumerate() {
        let _ = writeln!(s, "  dec{} {sh}", i + 1);
    }
    let _ = writeln!(s, "cross-fusion adds ({}):", report.cross_adds.len());
    for c in &report.cross_adds {
        let mark = if c.decoder_shape == c.encoder_shape {
            "ok"
        } else {
            "MISMATCH"
        };
        let _ = writeln!(
            s,
            "  {}  {} + {}  {mark}",
            c.entry, c.decoder_shape, c.encoder_shape
        );
    }

    let _ = writeln!(
        s,
        "\ndepth sweep (published widths, input {})",
        cfg.model.input_size
    );
    let _ = writeln!(s, "{:<12} {:>12}", "model", "params");
    for d in 2..=5 {
        let m = ModelConfig {
            input_size: cfg.model.input_size,
            in_channels: cfg.model.in_channels,
            n_classes: cfg.model.n_classes,
            ..ModelConfig::published_depth(d)?
        }
        .with_strategy(cfg.model.strategy());
        let _ = writeln!(
            s,
            "{:<12} {:>12}",
            format!("MC-Net({d})"),
            total_params(&m)?
        );
    }
    let _ = writeln!(s, "\nstrategy sweep");
    let _ = writeln!(s, "{:<18} {:>12}", "variant", "params");
    for st in Strategy::ALL {
        let m = cfg.model.clone().with_strategy(st);
        let _ = writeln!(s, "{:<18} {:>12}", st.label(), total_params(&m)?);
    }
    fs::create_dir_all(out)?;
    write(out.join("audit.txt"), &s)?;
    write(
        out.join("audit.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    print!("{s}");
    Ok(())
}

pub fn synth(cfg: RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.data.synth;
    let samples = synth_dataset(cfg.seed, s.n_samples, s.side, s.n_classes)?;
    let manifest = write_dataset(out, &samples, s.n_classes)?;
    println!(
        "wrote {} samples to {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}
