//! Objects, their star graphs, and a generated dataset.
//!
//!     cargo run --example world_and_dataset -- [out.txt]

use graphref::{build_graph, enumerate_objects, make_dataset, ObjectSpec, Result, SamplingMode, SplitMode, World};

fn main() -> Result<()> {
    let world = World::new(3, 4)?;
    let objects = enumerate_objects(3, 4)?;
    println!("p=3, t=4: {} objects, first {} last {}", objects.len(), objects[0], objects[63]);

    let spec: ObjectSpec = "2,0,1".parse()?;
    let g = build_graph(&world, &spec)?;
    println!("\nstar graph of {spec}: {} nodes, edges {:?}", g.num_nodes(), g.edges());
    println!("node features (property one-hot ++ type one-hot, central node last):");
    for r in 0..g.num_nodes() {
        println!("  {:?}", g.features().row(r));
    }

    let ds = make_dataset(world, 4, 10_000, 1, SamplingMode::Uniform, SplitMode::Episode)?;
    println!(
        "\nK=4 dataset: train {} / validation {} / test {}, hash {}",
        ds.train().len(),
        ds.validation().len(),
        ds.test().len(),
        &ds.content_hash()[..12]
    );
    for e in ds.train().iter().take(3) {
        let cands: Vec<String> = e.candidates().iter().map(|c| c.to_string()).collect();
        println!("  target {} at {} among [{}]", e.target, e.target_position, cands.join("  "));
    }

    let near = make_dataset(world, 3, 100, 2, SamplingMode::KDiff(1), SplitMode::HoldoutTargets(0.2))?;
    let e = &near.test()[0];
    println!(
        "\nk_diff(1) with {} held-out targets; test episode: target {}, distractors {:?}",
        near.heldout.len(),
        e.target,
        e.distractors.iter().map(ToString::to_string).collect::<Vec<_>>()
    );

    if let Some(path) = std::env::args().nth(1) {
        ds.save(path.as_ref())?;
        println!("\nwrote {path}");
    }
    Ok(())
}
