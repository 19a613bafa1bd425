//! Multi-seed sweep over vocabulary size and distractor count, printed as
//! a symbol-usage table.
//!
//!     cargo run --release --example sweep -- [seeds] [epochs]
//!
//! The full grid (|V| in 5, 10, 25, 50; K in 2, 4, 9; three seeds, 100
//! epochs) takes a while; the defaults here are a smaller slice of it.

use graphref::analysis::sweep;
use graphref::{Result, TrainConfig};

fn main() -> Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds: Vec<u64> = (1..=args.first().copied().unwrap_or(2)).collect();
    let base = TrainConfig {
        epochs: args.get(1).copied().unwrap_or(15) as usize,
        ..TrainConfig::default()
    };
    let report = sweep(&base, &[5, 10, 25], &[2, 4], &seeds)?;
    println!("Distinct symbols, mean ± standard error over {} seeds\n", seeds.len());
    println!("{}", report.usage_table());
    println!("Test accuracy\n");
    println!("{}", report.accuracy_table());
    for f in &report.failures {
        println!("failed: |V|={} K={} seed {}: {}", f.vocab, f.k, f.seed, f.reason);
    }
    Ok(())
}
