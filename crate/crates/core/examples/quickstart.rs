//! Generate a synthetic graph, train ATGAT-W, score the held-out nodes, and
//! round-trip the model through a checkpoint.
//!
//! cargo run --release --example quickstart -- [epochs]

use atgat::graph_data::{split_nodes, Label};
use atgat::metrics::MetricRecord;
use atgat::model::{read_checkpoint, write_checkpoint, GraphContext, ModelConfig, ModelVariant};
use atgat::synth::{generate_synthetic, SynthConfig};
use atgat::training::{evaluate, train_on_context, TrainConfig};

fn main() -> atgat::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);

    let graph = generate_synthetic(&SynthConfig::default())?;
    println!(
        "graph: {} nodes, {} edges, {} illicit, {} time steps",
        graph.num_nodes(),
        graph.num_edges(),
        graph.count_label(Label::Illicit),
        graph.max_timestamp()
    );

    let split = split_nodes(&graph, (0.8, 0.1, 0.1), 0, true)?;
    let graph = graph.standardized(&split.train_idx)?;
    let model_config = ModelConfig::default();
    let ctx = GraphContext::new(&graph, model_config.temporal.d_pos)?;
    let variant: ModelVariant = "ATGAT-W".parse()?;
    let train = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let out = train_on_context(&graph, &ctx, &split, variant, &model_config, &train)?;
    for r in out.history.records.iter().step_by((epochs / 6).max(1)) {
        println!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  val AUC {:.4}",
            r.epoch, r.lr, r.train_loss, r.val_auc
        );
    }
    println!("kept epoch {}", out.history.selected_epoch);

    let held = evaluate(&out.model, &ctx, &graph, &split.held_idx, train.threshold)?;
    println!("held-out:\n{}", held.to_table());

    let path = std::env::temp_dir().join("atgat-quickstart.bin");
    write_checkpoint(&out.model, &path)?;
    let restored = read_checkpoint(&path)?;
    let again: MetricRecord = evaluate(&restored, &ctx, &graph, &split.held_idx, train.threshold)?;
    assert_eq!(again, held);
    println!("checkpoint {} reproduces the held-out metrics", path.display());
    Ok(())
}
