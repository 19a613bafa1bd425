//! Trains a sender/receiver pair and saves the best checkpoint.
//!
//!     cargo run --release --example train_agents -- [vocab] [k] [seed] [checkpoint.txt]
//!
//! Defaults to |V|=25, K=2, seed 1.

use graphref::training::train_with;
use graphref::{checkpoint, Result, TrainConfig};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, default: u64| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let cfg = TrainConfig {
        vocab_size: num(0, 25) as usize,
        k: num(1, 2) as usize,
        seed: num(2, 1),
        ..TrainConfig::default()
    };
    let ds = cfg.make_dataset()?;
    println!("training |V|={} K={} seed={} on {} episodes", cfg.vocab_size, cfg.k, cfg.seed, ds.train().len());
    let out = train_with(&cfg, &ds, |m| {
        if m.split == "validation" && m.epoch % 5 == 0 {
            println!("epoch {:>3}: validation accuracy {:.3}, {} symbols", m.epoch, m.accuracy, m.distinct_symbols);
        }
        Ok(())
    })?;
    println!(
        "best epoch {} of {}: test accuracy {:.3} (chance {:.3}) with {} distinct symbols",
        out.best_epoch,
        out.epochs_run,
        out.test.accuracy,
        1.0 / (cfg.k + 1) as f64,
        out.test.distinct_symbols
    );
    if let Some(path) = args.get(3) {
        checkpoint::save(&out.agents, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
