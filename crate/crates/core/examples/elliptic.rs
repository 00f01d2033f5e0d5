//! Train and evaluate on Elliptic-style transaction files.
//!
//! The directory must hold `txs_features.csv`, `txs_classes.csv` and
//! `txs_edgelist.csv`; classes use `1` for illicit and `2` for licit.
//!
//! cargo run --release --example elliptic -- <data_dir> [epochs] [variant]

use atgat::graph_data::{dataset_paths, load_graph, split_nodes, Label, LoadOptions};
use atgat::model::{GraphContext, ModelConfig, ModelVariant};
use atgat::training::{evaluate, train_on_context, TrainConfig};

fn main() -> atgat::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next() else {
        eprintln!("usage: elliptic <data_dir> [epochs] [variant]");
        std::process::exit(1);
    };
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(170);
    let variant: ModelVariant = args.next().as_deref().unwrap_or("ATGAT-W").parse()?;

    let (f, c, e) = dataset_paths(&dir);
    let graph = load_graph(f, c, e, &LoadOptions::default())?;
    println!(
        "{} nodes ({} illicit, {} licit, {} unknown), {} edges, {} features",
        graph.num_nodes(),
        graph.count_label(Label::Illicit),
        graph.count_label(Label::Licit),
        graph.count_label(Label::Unknown),
        graph.num_edges(),
        graph.feature_dim()
    );
    // train on the labeled nodes only, features as given
    let graph = graph.induced_labeled_subgraph();
    let split = split_nodes(&graph, (0.8, 0.1, 0.1), 0, false)?;
    let config = ModelConfig::default();
    let ctx = GraphContext::new(&graph, config.temporal.d_pos)?;
    let train = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let out = train_on_context(&graph, &ctx, &split, variant, &config, &train)?;
    println!("{variant}: validation\n{}", out.validation.to_table());
    let held = evaluate(&out.model, &ctx, &graph, &split.held_idx, train.threshold)?;
    println!("held-out\n{}", held.to_table());
    Ok(())
}
