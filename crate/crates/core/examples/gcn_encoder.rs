//! The normalised star adjacency and what the GCN encoder does with it.
//!
//!     cargo run --example gcn_encoder

use graphref::gnn::{normalized_adjacency, Activation, GcnEncoder};
use graphref::rng::{stream, Stream};
use graphref::tensor::Pooling;
use graphref::{build_graph, ObjectSpec, Result, World};

fn main() -> Result<()> {
    let world = World::new(3, 4)?;
    let g = build_graph(&world, &ObjectSpec::new(vec![2, 0, 1]))?;
    let a = normalized_adjacency(&g);
    println!("normalised adjacency of a 3-leaf star (central node last):");
    for r in 0..a.rows() {
        let row: Vec<String> = a.row(r).iter().map(|v| format!("{v:.4}")).collect();
        println!("  {}", row.join("  "));
    }

    let mut rng = stream(1, Stream::Init);
    let enc = GcnEncoder::new(&mut rng, &[7, 16, 8], Activation::Tanh, Activation::Identity, Pooling::Mean)?;
    let base = enc.encode(&g)?;
    let moved = enc.encode(&g.relabel(&[3, 1, 0, 2])?)?;
    let drift = base.data().iter().zip(moved.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("\nembedding of 2,0,1: {:.3?}", base.data());
    println!("after relabelling the nodes: max difference {drift:.1e}");

    println!("\npairwise embedding distances between a few objects:");
    let specs = ["0,0,0", "0,0,1", "1,0,0", "3,3,3"];
    let embs: Vec<_> = specs
        .iter()
        .map(|s| enc.encode(&build_graph(&world, &s.parse()?)?))
        .collect::<Result<_>>()?;
    for (i, a) in embs.iter().enumerate() {
        let d: Vec<String> = embs
            .iter()
            .map(|b| {
                let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
                format!("{:.3}", sq.sqrt())
            })
            .collect();
        println!("  {:>6}  {}", specs[i], d.join("  "));
    }
    Ok(())
}
