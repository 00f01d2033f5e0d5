//! One triple-attention layer on a small directed graph: the structural,
//! temporal and global coefficients, the fusion weights, and the fused result.
//!
//! cargo run --example triple_attention

use atgat::attention::{AttentionConfig, AttentionKind, EdgeContext, TripleAttentionLayer};
use atgat::autodiff::{Graph, Matrix, Mode};
use atgat::model::params::ParamStore;
use atgat::temporal::{TemporalConfig, TemporalEmbedding, TemporalInputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> atgat::Result<()> {
    let times = [1u32, 1, 2, 5, 5];
    let edges = [(0, 2), (1, 2), (2, 3), (0, 3), (3, 4), (1, 4)];
    let ctx = EdgeContext::with_self_loops(times.len(), &edges)?;
    let pairs: Vec<(u32, u32)> = ctx.pairs().iter().map(|&(s, d)| (times[s], times[d])).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let tcfg = TemporalConfig {
        d_t: 8,
        d_pos: 4,
        dropout: 0.0,
    };
    let emb = TemporalEmbedding::new(&mut store, "time", tcfg, &mut rng)?;
    let acfg = AttentionConfig {
        heads: 2,
        head_dim: 4,
        ..AttentionConfig::default()
    };
    let layer = TripleAttentionLayer::new(&mut store, "att", AttentionKind::Triple, 3, 6, tcfg.d_t, acfg, &mut rng)?;

    let feats = Matrix::from_rows(&[
        [0.2, -0.4, 1.0],
        [1.3, 0.1, -0.2],
        [-0.7, 0.9, 0.4],
        [0.0, -1.1, 0.6],
        [0.8, 0.5, -0.9],
    ])?;
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let h = g.leaf(feats);
    let e = emb.forward(&mut g, &b, &TemporalInputs::new(&pairs, tcfg.d_pos)?, Mode::Eval, &mut rng)?;
    let s = layer.structural_scores(&mut g, &b, h, &ctx)?;
    let t = layer.temporal_scores(&mut g, &b, h, &ctx, e)?;
    let gl = layer.global_scores(&mut g, &b, h, &ctx, e)?;
    let fused = layer.fuse(&mut g, &b, s, t, gl, e, &ctx)?;

    println!("edge        dt  structural  temporal  global   w_s   w_t   w_g   fused   (head 0)");
    for (k, (src, dst)) in ctx.pairs().into_iter().enumerate() {
        let w = g.value(fused.weights).row(k);
        println!(
            "{src}->{dst}{}  {:>4}  {:>9.3}  {:>8.3}  {:>6.3}  {:.2}  {:.2}  {:.2}  {:>6.3}",
            if src == dst { " (self)" } else { "       " },
            times[dst] - times[src],
            g.value(s).get(k, 0),
            g.value(t).get(k, 0),
            g.value(gl).get(k, 0),
            w[0],
            w[1],
            w[2],
            g.value(fused.alpha).get(k, 0)
        );
    }
    let out = layer.forward(&mut g, &b, h, &ctx, Some(e), Mode::Eval, &mut rng)?;
    println!("output: {:?}", g.shape(out));
    Ok(())
}
