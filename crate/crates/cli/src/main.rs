mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcnet::metrics::Task;
use mcnet::model::Strategy;

use crate::commands::{SplitChoice, CHECKPOINT};
use crate::config::{read_config, Overrides};

/// Train, evaluate and audit MC-Net segmentation models.
#[derive(Parser)]
#[command(name = "mcnet", version)]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "mcnet-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// Number of encoder/decoder submodules (2..=5).
    #[arg(long)]
    depth: Option<usize>,
    /// Base width for reduced models: encoder widths are width·[1,2,4,4,8].
    #[arg(long)]
    width: Option<usize>,
    /// Ablation variant: none, 1, 2 or full.
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Args, Default)]
struct DataFlags {
    /// Use generated data (the default when no dataset root is configured).
    #[arg(long)]
    synth: bool,
    /// Dataset root directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    /// Label count including background.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// binary, chaos or brats.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the checkpoint, loss.csv and config.json.
    Train {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint; writes metrics.json and metrics.txt.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Predict the mask of one image (one PGM per modality).
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "image", required = true, value_delimiter = ',')]
        images: Vec<PathBuf>,
        /// Also write a contrast-stretched mask for viewing.
        #[arg(long)]
        vis: bool,
    },
    /// Print and save per-layer shapes and parameter counts.
    Audit {
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Generate a synthetic dataset in the on-disk layout.
    Synth {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
}

fn overrides(seed: Option<u64>, m: &ModelFlags, d: &DataFlags) -> Overrides {
    Overrides {
        seed,
        synth: d.synth,
        data: d.data.clone(),
        depth: m.depth,
        width: m.width,
        strategy: m.strategy,
        batch_size: d.batch_size,
        n_samples: d.n_samples,
        side: d.side,
        classes: d.classes,
        task: d.task,
        ..Overrides::default()
    }
}

fn run(cli: Cli) -> mcnet::Result<()> {
    let file = read_config(cli.config.as_deref())?;
    let out = cli.out;
    let ckpt = |c: Option<PathBuf>| c.unwrap_or_else(|| out.join(CHECKPOINT));
    match cli.command {
        Command::Train {
            model,
            data,
            epochs,
            lr,
        } => {
            let o = Overrides {
                epochs,
                lr,
                ..overrides(cli.seed, &model, &data)
            };
            commands::train(file.resolve(&o, true)?, &out)
        }
        Command::Eval {
            checkpoint,
            split,
            data,
        } => {
            let o = overrides(cli.seed, &ModelFlags::default(), &data);
            let cfg = file.resolve(&o, true)?;
            commands::eval(cfg, cli.config.is_some(), &ckpt(checkpoint), split, &out)
        }
        Command::Predict {
            checkpoint,
            images,
            vis,
        } => commands::predict(&ckpt(checkpoint), &images, vis, &out),
        Command::Audit { model } => {
            let o = overrides(cli.seed, &model, &DataFlags::default());
            commands::audit(file.resolve(&o, false)?, &out)
        }
        Command::Synth {
            n_samples,
            side,
            classes,
        } => {
            let o = Overrides {
                seed: cli.seed,
                n_samples,
                side,
                classes,
                ..Overrides::default()
            };
            commands::synth(file.resolve(&o, false)?, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
