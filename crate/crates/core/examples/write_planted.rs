//! Writes a planted-partition graph as a dataset directory.
//!
//! `cargo run --example write_planted -- <cora|small> <seed> <out-dir>`

use groc_core::graph::save_graph;
use groc_core::graph::synthetic::PlantedPartition;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [preset, seed, out] = args.as_slice() else {
        anyhow::bail!("usage: write_planted <cora|small> <seed> <out-dir>");
    };
    let seed: u64 = seed.parse()?;
    let planted = match preset.as_str() {
        "cora" => PlantedPartition::cora_sized(seed),
        "small" => PlantedPartition::small(seed),
        other => anyhow::bail!("unknown preset {other:?}"),
    };
    let graph = planted.generate()?;
    save_graph(&graph, out)?;
    println!(
        "wrote {out}: {} nodes, {} edges, {} features, {} classes",
        graph.num_nodes(),
        graph.num_edges(),
        graph.num_features(),
        graph.num_classes()
    );
    Ok(())
}
