//! Repeated-seed ablation on a synthetic graph: trains each variant under
//! several seeds and prints the summary table with the Cohen's d matrix.
//!
//! cargo run --release --example ablation -- [epochs] [seeds] [variants...]

use std::time::Instant;

use atgat::metrics::{ablation_run, SplitMode};
use atgat::model::{ModelConfig, ModelVariant};
use atgat::synth::{generate_synthetic, SynthConfig};
use atgat::training::TrainConfig;

fn main() -> atgat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(170);
    let n_seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut variants: Vec<ModelVariant> = args.iter().skip(2).map(|s| s.parse()).collect::<atgat::Result<_>>()?;
    if variants.is_empty() {
        variants = ["B-GAT", "GCN-W", "ATGAT-W"].iter().map(|s| s.parse()).collect::<atgat::Result<_>>()?;
    }

    let graph = generate_synthetic(&SynthConfig::default())?;
    let split = SplitMode::PerSeed {
        ratios: (0.8, 0.1, 0.1),
        stratified: true,
    };
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let train = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = ablation_run(&graph, &split, &seeds, &variants, &ModelConfig::default(), &train)?;
    print!("{}", report.to_table());
    for row in &report.rows {
        println!("{} AUCs {:?}", row.variant, row.aucs());
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
