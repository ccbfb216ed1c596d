//! Overfits a small network on synthetic binary data and prints the curve.
//!
//! `cargo run --release -p mcnet --example overfit -- [epochs] [lr]`

use std::time::Instant;

use mcnet::data::synth_dataset;
use mcnet::metrics::Task;
use mcnet::model::{assemble_model, evaluate_dataset, train_epoch, ModelConfig, TrainOptions};
use mcnet::optim::AdamConfig;

fn main() -> mcnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let lr: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1e-3);

    let cfg = ModelConfig::scaled(3, 24, 64)?;
    let mut model = assemble_model::<f32>(&cfg)?;
    let samples = synth_dataset(0, 16, 64, 2)?;
    let opts = TrainOptions {
        adam: AdamConfig::with_lr(lr),
        batch_size: 4,
        seed: 0,
        shuffle: true,
    };
    let start = Instant::now();
    for epoch in 0..epochs {
        let losses = train_epoch(&mut model, &samples, &opts, epoch)?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if epoch % 10 == 9 || epoch + 1 == epochs {
            let r = evaluate_dataset(&model, &samples, Task::Binary, 4)?;
            let e = &r.entries[0];
            println!(
                "epoch {:>4}  loss {mean:.5}  acc {:.2}  dice {:.2}  {:.1}s",
                epoch + 1,
                e.get("accuracy").unwrap_or(f64::NAN),
                e.get("dice_tp").unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
