//! Trains the four strategy variants on synthetic multi-class data and
//! compares their held-out loss.
//!
//! `cargo run --release -p mcnet --example ablation -- [seeds] [epochs] [lr]`

use mcnet::data::{split_dataset, synth_dataset};
use mcnet::model::{assemble_model, eval_loss, train_epoch, ModelConfig, Strategy, TrainOptions};
use mcnet::optim::AdamConfig;

fn main() -> mcnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let epochs: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(15);
    let lr: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(3e-3);
    for seed in 0..seeds {
        let data = synth_dataset(100 + seed, 40, 32, 5)?;
        let (train, test) = split_dataset(&data, (3, 2), seed)?;
        let mut row = Vec::new();
        for s in Strategy::ALL {
            let mut cfg = ModelConfig::scaled(3, 6, 32)?.with_strategy(s);
            cfg.n_classes = 5;
            cfg.seed = seed;
            let mut model = assemble_model::<f32>(&cfg)?;
            let opts = TrainOptions {
                adam: AdamConfig::with_lr(lr),
                batch_size: 4,
                seed,
                shuffle: true,
            };
            for e in 0..epochs {
                train_epoch(&mut model, &train, &opts, e)?;
            }
            row.push((s.label(), eval_loss(&model, &test, 8)?));
        }
        println!("seed {seed}: {row:?}");
    }
    Ok(())
}
