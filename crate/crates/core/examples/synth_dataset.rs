//! Generate a synthetic dataset, summarize its fraud signatures, and write it
//! in the three-file format.
//!
//! cargo run --example synth_dataset -- [output_dir]

use std::path::PathBuf;

use atgat::graph_data::{dataset_paths, load_graph, Label, LoadOptions};
use atgat::synth::{generate_detailed, write_synthetic, SynthConfig};

fn main() -> atgat::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("atgat-synth"));
    let config = SynthConfig::default();
    let s = generate_detailed(&config)?;
    let g = &s.graph;

    let mean_dt = |edges: &mut dyn Iterator<Item = usize>| -> atgat::Result<f64> {
        let mut n = 0usize;
        let mut total = 0u64;
        for e in edges {
            total += g.edge_time_delta(e)? as u64;
            n += 1;
        }
        Ok(total as f64 / n as f64)
    };
    let fraud: std::collections::HashSet<usize> = s.fraud_edges.iter().copied().collect();
    println!(
        "{} nodes, {} edges, {} illicit",
        g.num_nodes(),
        g.num_edges(),
        g.count_label(Label::Illicit)
    );
    println!(
        "mean edge dt: fraud in-edges {:.2}, other edges {:.2}",
        mean_dt(&mut s.fraud_edges.iter().copied())?,
        mean_dt(&mut (0..g.num_edges()).filter(|e| !fraud.contains(e)))?
    );
    let max_in = (0..g.num_nodes()).map(|v| g.in_adjacency().degree(v)).max().unwrap_or(0);
    let max_out = (0..g.num_nodes()).map(|v| g.out_adjacency().degree(v)).max().unwrap_or(0);
    println!("max in-degree {max_in}, max out-degree {max_out}");
    println!("shifted feature columns {:?} by {}", s.shifted_columns, config.feature_shift);

    write_synthetic(&config, &dir)?;
    let (f, c, e) = dataset_paths(&dir);
    let back = load_graph(&f, &c, &e, &LoadOptions::default())?;
    assert_eq!(back.edges(), g.edges());
    println!("wrote and reloaded {}", dir.display());
    Ok(())
}
