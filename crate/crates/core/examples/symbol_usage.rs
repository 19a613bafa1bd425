//! How many symbols a trained sender actually uses, and for which objects.
//!
//!     cargo run --release --example symbol_usage -- [vocab] [k]

use std::collections::BTreeMap;

use graphref::agents::SendMode;
use graphref::analysis::symbol_usage;
use graphref::rng::{stream, Stream};
use graphref::{train, GraphCache, Result, TrainConfig};

fn main() -> Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cfg = TrainConfig {
        vocab_size: args.first().copied().unwrap_or(25),
        k: args.get(1).copied().unwrap_or(4),
        ..TrainConfig::default()
    };
    let ds = cfg.make_dataset()?;
    let out = train(&cfg, &ds)?;
    let cache = GraphCache::new(ds.world)?;
    let usage = symbol_usage(&out.agents, &cache, ds.test())?;
    println!(
        "|V|={} K={}: {} symbols used ({:.1}%), test accuracy {:.3}",
        usage.vocab, cfg.k, usage.distinct_count, usage.percent_of_vocab, out.test.accuracy
    );

    // evaluation-mode messages are deterministic; the generator goes unused
    let mut rng = stream(0, Stream::Channel);
    let mut objects: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for spec in graphref::enumerate_objects(cfg.p, cfg.t)? {
        let symbol = out.agents.sender.send(cache.get(&spec), SendMode::Eval, &mut rng)?.symbol();
        objects.entry(symbol).or_default().push(spec.to_string());
    }
    for (symbol, specs) in objects {
        println!("symbol {symbol:>2} ({:>4} test uses): {}", usage.counts[symbol], specs.join(" "));
    }
    Ok(())
}
