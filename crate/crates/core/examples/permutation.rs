//! Shuffles candidate order and checks that the receiver's choices move
//! with the target.
//!
//!     cargo run --release --example permutation -- [shuffles]

use graphref::analysis::permutation_test;
use graphref::rng::{stream, Stream};
use graphref::{train, GraphCache, Result, TrainConfig};

fn main() -> Result<()> {
    let shuffles = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let cfg = TrainConfig {
        vocab_size: 10,
        epochs: 20,
        ..TrainConfig::default()
    };
    let ds = cfg.make_dataset()?;
    let out = train(&cfg, &ds)?;
    let mut rng = stream(cfg.seed, Stream::Analysis);
    let r = permutation_test(&out.agents, &GraphCache::new(ds.world)?, ds.test(), shuffles, &mut rng)?;
    println!(
        "{} test episodes x {} shuffles: agreement {:.4}, accuracy {:.4} vs {:.4} unshuffled",
        r.episodes, r.permutations, r.agreement_rate, r.permuted_accuracy, r.base_accuracy
    );
    for (shift, acc) in r.rotation_accuracy.iter().enumerate() {
        println!("  candidates rotated by {shift}: accuracy {acc:.4}");
    }
    Ok(())
}
