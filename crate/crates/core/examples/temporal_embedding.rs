//! Per-edge temporal features and the learned temporal embedding.
//!
//! cargo run --example temporal_embedding

use atgat::autodiff::{Graph, Mode};
use atgat::model::params::ParamStore;
use atgat::temporal::{multiscale_features, positional_encoding, TemporalConfig, TemporalEmbedding, TemporalInputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> atgat::Result<()> {
    for dt in [0.0, 1.0, 4.0, 48.0] {
        let [a, b, c] = multiscale_features(dt)?;
        println!("dt {dt:>4}: multiscale ({a:.3}, {b:.3}, {c:.3})");
    }
    let pe = positional_encoding(7.0, 8)?;
    println!("PE(7), d_pos 8: {:?}", pe.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let config = TemporalConfig::default();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let emb = TemporalEmbedding::new(&mut store, "time", config, &mut rng)?;
    println!(
        "embedding: d_t {} = {} (delta) + {} (positions) + {} (multiscale) before fusion; {} parameters",
        config.d_t,
        config.d1(),
        config.d2(),
        config.d3(),
        store.num_scalars()
    );

    // (t_src, t_dst) per edge
    let pairs = [(3, 3), (3, 4), (1, 30), (10, 49)];
    let inputs = TemporalInputs::new(&pairs, config.d_pos)?;
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let e = emb.forward(&mut g, &b, &inputs, Mode::Eval, &mut rng)?;
    for (k, (ts, td)) in pairs.iter().enumerate() {
        let row = g.value(e).row(k);
        let active = row.iter().filter(|&&v| v > 0.0).count();
        println!(
            "edge {ts}->{td}: {active}/{} active units, first four {:?}",
            row.len(),
            row[..4].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
