//! Forces every symbol into the channel for episodes the agents solved and
//! prints how often the receiver still finds the target.
//!
//!     cargo run --release --example robustness -- [vocab] [k] [seed]

use graphref::analysis::robustness_matrix;
use graphref::{train, GraphCache, Result, TrainConfig};

fn main() -> Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cfg = TrainConfig {
        vocab_size: args.first().copied().unwrap_or(10) as usize,
        k: args.get(1).copied().unwrap_or(4) as usize,
        seed: args.get(2).copied().unwrap_or(1),
        ..TrainConfig::default()
    };
    let ds = cfg.make_dataset()?;
    let out = train(&cfg, &ds)?;
    let m = robustness_matrix(&out.agents, &GraphCache::new(ds.world)?, ds.test())?;
    println!("test accuracy {:.3}; rows: symbol sent, columns: symbol forced", out.test.accuracy);
    print!("{:>12}", "");
    for s in 0..m.vocab {
        print!("{s:>6}");
    }
    println!();
    for (s, row) in m.entries.iter().enumerate() {
        print!("{s:>3} n={:<6}", m.support[s]);
        match row {
            Some(r) => r.iter().for_each(|v| print!("{v:>6.2}")),
            None => print!("  (no correctly solved episode used this symbol)"),
        }
        println!();
    }
    println!("rows without a strict diagonal maximum: {:?}", m.diagonal_violations(true));
    Ok(())
}
