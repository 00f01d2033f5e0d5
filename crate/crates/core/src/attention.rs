//! Attention layers over directed edges with self-loops.
//!
//! Messages flow from an edge's source to its destination, and every
//! neighborhood softmax is taken over a destination's incoming edges,
//! including its self-loop.
//!
//! [`TripleAttentionLayer`] computes per head
//!
//! - structural scores `(Q h_dst · K h_src) / √d_h`, softmaxed per destination,
//! - temporal scores, the same with key `K h_src + K_t e_time`,
//! - global scores `leaky_relu(W_g · [h_dst, h_src, e_time])`, softmaxed over
//!   all edges,
//!
//! and fuses them with per-edge weights `(w_s, w_t, w_g)` produced by a small
//! perceptron. The fused score is renormalized per destination so that
//! aggregation stays a convex combination of `V h_src + V_t e_time`.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::autodiff::{Graph, Indices, Matrix, Mode, Segments, Var};
use crate::error::{Error, Result};
use crate::model::params::{Bound, Linear, ParamId, ParamStore};

/// Edge index arrays for message passing: raw edges first, then one
/// self-loop per node in node order.
#[derive(Clone, Debug)]
pub struct EdgeContext {
    pub num_nodes: usize,
    pub src: Indices,
    pub dst: Indices,
    /// Segments keyed by destination node.
    pub by_dst: Segments,
    /// A single segment spanning every edge.
    pub all: Segments,
    pub num_raw_edges: usize,
}

impl EdgeContext {
    pub fn with_self_loops(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut src = Vec::with_capacity(edges.len() + num_nodes);
        let mut dst = Vec::with_capacity(edges.len() + num_nodes);
        for &(s, d) in edges {
            if s >= num_nodes || d >= num_nodes {
                return Err(Error::invalid(format!("edge ({s}, {d}) out of range for {num_nodes} nodes")));
            }
            src.push(s);
            dst.push(d);
        }
        for i in 0..num_nodes {
            src.push(i);
            dst.push(i);
        }
        let dst: Indices = Arc::from(dst);
        let by_dst = Segments::new(dst.clone(), num_nodes)?;
        Ok(Self {
            num_nodes,
            all: Segments::single(src.len()),
            src: Arc::from(src),
            dst,
            by_dst,
            num_raw_edges: edges.len(),
        })
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// `(src, dst)` of every edge including self-loops.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.src.iter().copied().zip(self.dst.iter().copied()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub leaky_slope: f64,
    /// Dropout on normalized attention weights.
    pub dropout: f64,
    pub fusion_hidden: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            head_dim: 16,
            leaky_slope: 0.2,
            dropout: 0.1,
            fusion_hidden: 16,
        }
    }
}

impl AttentionConfig {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.fusion_hidden == 0 {
            return Err(Error::invalid("heads, head_dim and fusion_hidden must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("attention dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Which scoring paths a dot-product layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Structural,
    Temporal,
    Triple,
}

impl AttentionKind {
    pub fn uses_time(self) -> bool {
        self != AttentionKind::Structural
    }
}

/// Fused attention and the fusion weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    /// E×H, renormalized per destination.
    pub alpha: Var,
    /// E×3 rows `(w_s, w_t, w_g)`.
    pub weights: Var,
}

#[derive(Clone, Debug)]
pub struct TripleAttentionLayer {
    pub kind: AttentionKind,
    pub config: AttentionConfig,
    pub d_in: usize,
    pub d_out: usize,
    pub d_time: usize,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub key_time: Option<ParamId>,
    pub value_time: Option<ParamId>,
    pub global: Option<ParamId>,
    pub fusion_hidden: Option<Linear>,
    pub fusion_out: Option<Linear>,
    pub output: Linear,
    /// Replaces the fusion perceptron with constant weights.
    pub fusion_override: Option<[f64; 3]>,
}

struct Projected {
    q: Var,
    k: Var,
    k_time: Option<Var>,
    v: Var,
}

impl TripleAttentionLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        kind: AttentionKind,
        d_in: usize,
        d_out: usize,
        d_time: usize,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if kind.uses_time() && d_time == 0 {
            return Err(Error::invalid(format!("{kind:?} attention needs a temporal embedding")));
        }
        let w = config.width();
        let h = config.heads;
        let query = store.glorot(format!("{prefix}.query"), d_in, w, rng);
        let key = store.glorot(format!("{prefix}.key"), d_in, w, rng);
        let value = store.glorot(format!("{prefix}.value"), d_in, w, rng);
        let (key_time, value_time) = if kind.uses_time() {
            (
                Some(store.glorot(format!("{prefix}.key_time"), d_time, w, rng)),
                Some(store.glorot(format!("{prefix}.value_time"), d_time, w, rng)),
            )
        } else {
            (None, None)
        };
        let (global, fusion_hidden, fusion_out) = if kind == AttentionKind::Triple {
            (
                Some(store.glorot(format!("{prefix}.global"), 2 * d_in + d_time, h, rng)),
                Some(Linear::new(store, &format!("{prefix}.fusion.hidden"), 3 * h + d_time, config.fusion_hidden, true, rng)),
                Some(Linear::new(store, &format!("{prefix}.fusion.out"), config.fusion_hidden, 3, true, rng)),
            )
        } else {
            (None, None, None)
        };
        let output = Linear::new(store, &format!("{prefix}.output"), w, d_out, true, rng);
        Ok(Self {
            kind,
            config,
            d_in,
            d_out,
            d_time: if kind.uses_time() { d_time } else { 0 },
            query,
            key,
            value,
            key_time,
            value_time,
            global,
            fusion_hidden,
            fusion_out,
            output,
            fusion_override: None,
        })
    }

    fn check_inputs(&self, g: &Graph, h: Var, ctx: &EdgeContext, e_time: Option<Var>) -> Result<()> {
        let (n, d) = g.shape(h);
        if n != ctx.num_nodes || d != self.d_in {
            return Err(Error::shape(
                "attention",
                format!("node matrix {n}x{d}, expected {}x{}", ctx.num_nodes, self.d_in),
            ));
        }
        if let Some(e) = e_time {
            let (rows, cols) = g.shape(e);
            if rows != ctx.num_edges() || (self.d_time > 0 && cols != self.d_time) {
                return Err(Error::shape(
                    "attention",
                    format!("temporal embedding {rows}x{cols}, expected {}x{}", ctx.num_edges(), self.d_time),
                ));
            }
        }
        Ok(())
    }

    fn require_time(&self, e_time: Option<Var>) -> Result<Var> {
        e_time.ok_or_else(|| Error::invalid("temporal path requires per-edge temporal embeddings"))
    }

    fn project(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext, e_time: Option<Var>) -> Result<Projected> {
        let q_nodes = g.matmul(h, b.var(self.query))?;
        let k_nodes = g.matmul(h, b.var(self.key))?;
        let v_nodes = g.matmul(h, b.var(self.value))?;
        let q = g.gather_rows(q_nodes, &ctx.dst)?;
        let k = g.gather_rows(k_nodes, &ctx.src)?;
        let mut v = g.gather_rows(v_nodes, &ctx.src)?;
        let mut k_time = None;
        if let (Some(kt), Some(vt)) = (self.key_time, self.value_time) {
            let e = self.require_time(e_time)?;
            let kt_e = g.matmul(e, b.var(kt))?;
            k_time = Some(g.add(k, kt_e)?);
            let vt_e = g.matmul(e, b.var(vt))?;
            v = g.add(v, vt_e)?;
        }
        Ok(Projected { q, k, k_time, v })
    }

    fn dot_attention(&self, g: &mut Graph, q: Var, k: Var, ctx: &EdgeContext) -> Result<Var> {
        let prod = g.mul(q, k)?;
        let raw = g.block_sum(prod, self.config.head_dim)?;
        let scaled = g.scale(raw, 1.0 / (self.config.head_dim as f64).sqrt());
        g.segment_softmax(scaled, &ctx.by_dst)
    }

    /// E×H structural attention, normalized per destination.
    pub fn structural_scores(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext) -> Result<Var> {
        self.check_inputs(g, h, ctx, None)?;
        let q_nodes = g.matmul(h, b.var(self.query))?;
        let k_nodes = g.matmul(h, b.var(self.key))?;
        let q = g.gather_rows(q_nodes, &ctx.dst)?;
        let k = g.gather_rows(k_nodes, &ctx.src)?;
        self.dot_attention(g, q, k, ctx)
    }

    /// E×H temporal attention: structural keys shifted by `K_t e_time`.
    pub fn temporal_scores(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext, e_time: Var) -> Result<Var> {
        self.check_inputs(g, h, ctx, Some(e_time))?;
        let kt = self
            .key_time
            .ok_or_else(|| Error::invalid("layer has no temporal key map"))?;
        let q_nodes = g.matmul(h, b.var(self.query))?;
        let k_nodes = g.matmul(h, b.var(self.key))?;
        let q = g.gather_rows(q_nodes, &ctx.dst)?;
        let k = g.gather_rows(k_nodes, &ctx.src)?;
        let kt_e = g.matmul(e_time, b.var(kt))?;
        let k = g.add(k, kt_e)?;
        self.dot_attention(g, q, k, ctx)
    }

    /// E×H global-context attention, softmaxed over all edges per head.
    pub fn global_scores(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext, e_time: Var) -> Result<Var> {
        self.check_inputs(g, h, ctx, Some(e_time))?;
        if ctx.num_edges() == 0 {
            return Err(Error::invalid("global attention over an empty edge set"));
        }
        let wg = self
            .global
            .ok_or_else(|| Error::invalid("layer has no global scoring map"))?;
        let h_dst = g.gather_rows(h, &ctx.dst)?;
        let h_src = g.gather_rows(h, &ctx.src)?;
        let feats = g.concat_cols(&[h_dst, h_src, e_time])?;
        let raw = g.matmul(feats, b.var(wg))?;
        let act = g.leaky_relu(raw, self.config.leaky_slope);
        g.segment_softmax(act, &ctx.all)
    }

    /// Combines the three score families with per-edge fusion weights and
    /// renormalizes per destination.
    #[allow(clippy::too_many_arguments)]
    pub fn fuse(
        &self,
        g: &mut Graph,
        b: &Bound,
        structural: Var,
        temporal: Var,
        global: Var,
        e_time: Var,
        ctx: &EdgeContext,
    ) -> Result<Fused> {
        let heads = self.config.heads;
        for v in [structural, temporal, global] {
            if g.shape(v) != (ctx.num_edges(), heads) {
                return Err(Error::shape(
                    "fuse_attention",
                    format!("score matrix {:?}, expected ({}, {heads})", g.shape(v), ctx.num_edges()),
                ));
            }
        }
        let weights = match self.fusion_override {
            Some(w) => {
                let rows: Vec<f64> = (0..ctx.num_edges()).flat_map(|_| w).collect();
                g.leaf(Matrix::new(ctx.num_edges(), 3, rows)?)
            }
            None => {
                let (hid, out) = self
                    .fusion_hidden
                    .zip(self.fusion_out)
                    .ok_or_else(|| Error::invalid("layer has no fusion network"))?;
                let input = g.concat_cols(&[structural, temporal, global, e_time])?;
                let hidden = hid.forward(g, b, input)?;
                let hidden = g.relu(hidden);
                let logits = out.forward(g, b, hidden)?;
                g.softmax_rows(logits)
            }
        };
        let mut acc: Option<Var> = None;
        for (col, scores) in [structural, temporal, global].into_iter().enumerate() {
            let w = g.slice_cols(weights, col, 1)?;
            let w = g.repeat_cols(w, heads)?;
            let term = g.mul(w, scores)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        let alpha = g.segment_normalize(acc.expect("three terms"), &ctx.by_dst)?;
        Ok(Fused { alpha, weights })
    }

    /// Attention coefficients this layer aggregates with (before dropout).
    pub fn attention(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext, e_time: Option<Var>) -> Result<Var> {
        let p = self.project(g, b, h, ctx, e_time)?;
        self.attention_from(g, b, h, ctx, e_time, &p)
    }

    fn attention_from(
        &self,
        g: &mut Graph,
        b: &Bound,
        h: Var,
        ctx: &EdgeContext,
        e_time: Option<Var>,
        p: &Projected,
    ) -> Result<Var> {
        match self.kind {
            AttentionKind::Structural => {
                let s = self.dot_attention(g, p.q, p.k, ctx)?;
                g.segment_normalize(s, &ctx.by_dst)
            }
            AttentionKind::Temporal => {
                let k = p.k_time.expect("temporal layer projects temporal keys");
                let t = self.dot_attention(g, p.q, k, ctx)?;
                g.segment_normalize(t, &ctx.by_dst)
            }
            AttentionKind::Triple => {
                let e = self.require_time(e_time)?;
                let s = self.dot_attention(g, p.q, p.k, ctx)?;
                let k = p.k_time.expect("triple layer projects temporal keys");
                let t = self.dot_attention(g, p.q, k, ctx)?;
                let gl = self.global_scores(g, b, h, ctx, e)?;
                Ok(self.fuse(g, b, s, t, gl, e, ctx)?.alpha)
            }
        }
    }

    /// N×d_out node representations after attention-weighted aggregation.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        h: Var,
        ctx: &EdgeContext,
        e_time: Option<Var>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.check_inputs(g, h, ctx, e_time)?;
        let p = self.project(g, b, h, ctx, e_time)?;
        let alpha = self.attention_from(g, b, h, ctx, e_time, &p)?;
        let alpha = g.dropout(alpha, self.config.dropout, mode, rng)?;
        aggregate(g, b, alpha, p.v, ctx, self.config.head_dim, &self.output)
    }
}

fn aggregate(
    g: &mut Graph,
    b: &Bound,
    alpha: Var,
    values: Var,
    ctx: &EdgeContext,
    head_dim: usize,
    output: &Linear,
) -> Result<Var> {
    let weights = g.repeat_cols(alpha, head_dim)?;
    let messages = g.mul(weights, values)?;
    let summed = g.scatter_add_rows(messages, &ctx.dst, ctx.num_nodes)?;
    output.forward(g, b, summed)
}

/// Classic additive graph attention:
/// `softmax_dst(leaky_relu(a_dst · W h_dst + a_src · W h_src))` per head.
#[derive(Clone, Debug)]
pub struct AdditiveAttentionLayer {
    pub config: AttentionConfig,
    pub d_in: usize,
    pub d_out: usize,
    pub weight: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub output: Linear,
}

impl AdditiveAttentionLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let w = config.width();
        Ok(Self {
            config,
            d_in,
            d_out,
            weight: store.glorot(format!("{prefix}.weight"), d_in, w, rng),
            att_src: store.glorot(format!("{prefix}.att_src"), 1, w, rng),
            att_dst: store.glorot(format!("{prefix}.att_dst"), 1, w, rng),
            output: Linear::new(store, &format!("{prefix}.output"), w, d_out, true, rng),
        })
    }

    fn transformed(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext) -> Result<Var> {
        let (n, d) = g.shape(h);
        if n != ctx.num_nodes || d != self.d_in {
            return Err(Error::shape(
                "additive_attention",
                format!("node matrix {n}x{d}, expected {}x{}", ctx.num_nodes, self.d_in),
            ));
        }
        g.matmul(h, b.var(self.weight))
    }

    fn attention_from(&self, g: &mut Graph, b: &Bound, wh: Var, ctx: &EdgeContext) -> Result<Var> {
        let dh = self.config.head_dim;
        let s_src = g.mul_row(wh, b.var(self.att_src))?;
        let s_src = g.block_sum(s_src, dh)?;
        let s_dst = g.mul_row(wh, b.var(self.att_dst))?;
        let s_dst = g.block_sum(s_dst, dh)?;
        let e_src = g.gather_rows(s_src, &ctx.src)?;
        let e_dst = g.gather_rows(s_dst, &ctx.dst)?;
        let raw = g.add(e_dst, e_src)?;
        let act = g.leaky_relu(raw, self.config.leaky_slope);
        g.segment_softmax(act, &ctx.by_dst)
    }

    pub fn attention(&self, g: &mut Graph, b: &Bound, h: Var, ctx: &EdgeContext) -> Result<Var> {
        let wh = self.transformed(g, b, h, ctx)?;
        self.attention_from(g, b, wh, ctx)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        h: Var,
        ctx: &EdgeContext,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let wh = self.transformed(g, b, h, ctx)?;
        let alpha = self.attention_from(g, b, wh, ctx)?;
        let alpha = g.dropout(alpha, self.config.dropout, mode, rng)?;
        let values = g.gather_rows(wh, &ctx.src)?;
        aggregate(g, b, alpha, values, ctx, self.config.head_dim, &self.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> AttentionConfig {
        AttentionConfig {
            heads: 2,
            head_dim: 3,
            leaky_slope: 0.2,
            dropout: 0.1,
            fusion_hidden: 4,
        }
    }

    fn layer(kind: AttentionKind, d_in: usize, d_t: usize, seed: u64) -> (ParamStore, TripleAttentionLayer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = TripleAttentionLayer::new(&mut store, "att", kind, d_in, 5, d_t, small_config(), &mut rng).unwrap();
        (store, l)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn sums_by_dst(g: &Graph, alpha: Var, ctx: &EdgeContext) -> Vec<f64> {
        let a = g.value(alpha);
        let mut sums = vec![0.0; ctx.num_nodes * a.cols()];
        for (e, &d) in ctx.dst.iter().enumerate() {
            for c in 0..a.cols() {
                sums[d * a.cols() + c] += a.get(e, c);
            }
        }
        sums
    }

    #[test]
    fn self_loop_only_node_gets_full_weight() {
        let (store, l) = layer(AttentionKind::Structural, 3, 0, 1);
        let ctx = EdgeContext::with_self_loops(1, &[]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(random(1, 3, 2));
        let a = l.structural_scores(&mut g, &b, h, &ctx).unwrap();
        assert_eq!(g.value(a).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn equal_keys_split_evenly() {
        let (store, l) = layer(AttentionKind::Structural, 3, 0, 1);
        // node 2 receives from 0 and 1, which share features; its own self-loop
        // is the third member of the neighborhood
        let feats = Matrix::from_rows(&[[0.5, -1.0, 0.2], [0.5, -1.0, 0.2], [0.1, 0.3, 0.9]]).unwrap();
        let ctx = EdgeContext::with_self_loops(3, &[(0, 2), (1, 2)]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(feats);
        let a = l.structural_scores(&mut g, &b, h, &ctx).unwrap();
        let a = g.value(a);
        for head in 0..2 {
            assert_eq!(a.get(0, head), a.get(1, head));
        }
    }

    #[test]
    fn structural_scores_hand_set() {
        // 1 head, d_h = 1, so the raw score is q_dst * k_src.
        let cfg = AttentionConfig { heads: 1, head_dim: 1, ..small_config() };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = TripleAttentionLayer::new(&mut store, "a", AttentionKind::Structural, 1, 1, 0, cfg, &mut rng).unwrap();
        store.set("a.query", Matrix::scalar(1.0)).unwrap();
        store.set("a.key", Matrix::scalar(1.0)).unwrap();
        // node 1 has in-edge from 0 (h_0 = 0) and self-loop (h_1 = sqrt(ln 2))
        let h1 = 2f64.ln().sqrt();
        let ctx = EdgeContext::with_self_loops(2, &[(0, 1)]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(Matrix::column(&[0.0, h1]));
        let a = l.structural_scores(&mut g, &b, h, &ctx).unwrap();
        let a = g.value(a);
        assert!((a.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((a.get(2, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.get(1, 0), 1.0);
    }

    #[test]
    fn temporal_collapses_to_structural() {
        let (mut store, l) = layer(AttentionKind::Triple, 4, 3, 5);
        let ctx = EdgeContext::with_self_loops(4, &[(0, 1), (2, 1), (3, 0), (1, 3)]).unwrap();
        let feats = random(4, 4, 9);
        let e = ctx.num_edges();

        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(feats.clone());
        let zero = g.leaf(Matrix::zeros(e, 3));
        let s = l.structural_scores(&mut g, &b, h, &ctx).unwrap();
        let t = l.temporal_scores(&mut g, &b, h, &ctx, zero).unwrap();
        assert_eq!(g.value(s), g.value(t));

        store.set("att.key_time", Matrix::zeros(3, 6)).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(feats);
        let et = g.leaf(random(e, 3, 4));
        let s = l.structural_scores(&mut g, &b, h, &ctx).unwrap();
        let t = l.temporal_scores(&mut g, &b, h, &ctx, et).unwrap();
        assert_eq!(g.value(s), g.value(t));
    }

    #[test]
    fn temporal_scores_hand_set() {
        // identical node features; keys differ only through K_t e_time
        let cfg = AttentionConfig { heads: 1, head_dim: 1, ..small_config() };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = TripleAttentionLayer::new(&mut store, "a", AttentionKind::Temporal, 1, 1, 1, cfg, &mut rng).unwrap();
        store.set("a.query", Matrix::scalar(2.0)).unwrap();
        store.set("a.key", Matrix::scalar(0.5)).unwrap();
        store.set("a.key_time", Matrix::scalar(1.5)).unwrap();
        let ctx = EdgeContext::with_self_loops(3, &[(0, 2), (1, 2)]).unwrap();
        let e_vals = [0.3, -0.4, 0.0, 0.0, 1.0];
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(Matrix::column(&[1.0, 1.0, 1.0]));
        let et = g.leaf(Matrix::column(&e_vals));
        let a = l.temporal_scores(&mut g, &b, h, &ctx, et).unwrap();
        // destination 2: edges 0, 1 and self-loop 4; score = 2 * (0.5 + 1.5 e)
        let s: Vec<f64> = [0usize, 1, 4].iter().map(|&k| 2.0 * (0.5 + 1.5 * e_vals[k])).collect();
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        let a = g.value(a);
        for (slot, &edge) in [0usize, 1, 4].iter().enumerate() {
            assert!((a.get(edge, 0) - s[slot].exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn global_scores_examples() {
        let (mut store, l) = layer(AttentionKind::Triple, 2, 2, 3);
        let ctx = EdgeContext::with_self_loops(1, &[]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(random(1, 2, 1));
        let et = g.leaf(random(1, 2, 2));
        let a = l.global_scores(&mut g, &b, h, &ctx, et).unwrap();
        assert_eq!(g.value(a).as_slice(), &[1.0, 1.0]);

        // identical edge features → uniform
        let ctx = EdgeContext::with_self_loops(3, &[]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(Matrix::filled(3, 2, 0.7));
        let et = g.leaf(Matrix::filled(3, 2, -0.1));
        let a = l.global_scores(&mut g, &b, h, &ctx, et).unwrap();
        assert!(g.value(a).as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        // raw scores (0, 0, ln 2): only e_time matters, weights pick its first column
        let mut w = Matrix::zeros(6, 2);
        w.set(4, 0, 1.0);
        w.set(4, 1, 1.0);
        store.set("att.global", w).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(random(3, 2, 5));
        let et = g.leaf(Matrix::from_rows(&[[0.0, 3.0], [0.0, -1.0], [2f64.ln(), 0.0]]).unwrap());
        let a = l.global_scores(&mut g, &b, h, &ctx, et).unwrap();
        let a = g.value(a);
        for (row, expected) in [0.25, 0.25, 0.5].iter().enumerate() {
            assert!((a.get(row, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_weight_cases() {
        let (store, mut l) = layer(AttentionKind::Triple, 3, 2, 8);
        let ctx = EdgeContext::with_self_loops(4, &[(0, 1), (2, 1), (3, 2), (1, 0), (0, 3)]).unwrap();
        let e = ctx.num_edges();
        let feats = random(4, 3, 1);
        let times = random(e, 2, 2);
        let eval = |l: &TripleAttentionLayer| {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let h = g.leaf(feats.clone());
            let et = g.leaf(times.clone());
            let s = l.structural_scores(&mut g, &b, h, &ctx).unwrap();
            let t = l.temporal_scores(&mut g, &b, h, &ctx, et).unwrap();
            let gl = l.global_scores(&mut g, &b, h, &ctx, et).unwrap();
            let f = l.fuse(&mut g, &b, s, t, gl, et, &ctx).unwrap();
            let s_norm = g.segment_normalize(s, &ctx.by_dst).unwrap();
            let mean = {
                let a = g.add(s, t).unwrap();
                let a = g.add(a, gl).unwrap();
                let a = g.scale(a, 1.0 / 3.0);
                g.segment_normalize(a, &ctx.by_dst).unwrap()
            };
            (
                g.value(f.alpha).clone(),
                g.value(f.weights).clone(),
                g.value(s_norm).clone(),
                g.value(mean).clone(),
            )
        };
        l.fusion_override = Some([1.0, 0.0, 0.0]);
        let (alpha, _, s_norm, _) = eval(&l);
        assert_eq!(alpha, s_norm);

        l.fusion_override = Some([1.0 / 3.0; 3]);
        let (alpha, _, _, mean) = eval(&l);
        assert!(alpha.max_abs_diff(&mean) < 1e-15);

        l.fusion_override = None;
        let (alpha, weights, _, _) = eval(&l);
        for r in 0..e {
            let row = weights.row(r);
            assert!(row.iter().all(|&w| w > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut g = Graph::new();
        let a = g.leaf(alpha);
        for s in sums_by_dst(&g, a, &ctx) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_rejects_misaligned() {
        let (store, l) = layer(AttentionKind::Triple, 3, 2, 8);
        let ctx = EdgeContext::with_self_loops(2, &[(0, 1)]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let ok = g.leaf(Matrix::filled(3, 2, 0.5));
        let bad = g.leaf(Matrix::filled(2, 2, 0.5));
        let et = g.leaf(Matrix::zeros(3, 2));
        assert!(l.fuse(&mut g, &b, ok, bad, ok, et, &ctx).is_err());
    }

    #[test]
    fn self_only_aggregation() {
        let cfg = AttentionConfig { heads: 1, head_dim: 2, ..small_config() };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = TripleAttentionLayer::new(&mut store, "a", AttentionKind::Structural, 2, 2, 0, cfg, &mut rng).unwrap();
        store.set("a.value", Matrix::identity(2)).unwrap();
        store.set("a.output.weight", Matrix::identity(2)).unwrap();
        let ctx = EdgeContext::with_self_loops(1, &[]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(Matrix::row_vector(&[0.4, -1.3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = l.forward(&mut g, &b, h, &ctx, None, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(out).as_slice(), &[0.4, -1.3]);
    }

    #[test]
    fn permutation_equivariance() {
        let (store, l) = layer(AttentionKind::Triple, 3, 2, 13);
        let edges = [(0, 1), (2, 1), (3, 2), (1, 0), (0, 3), (4, 0)];
        let n = 5;
        let feats = random(n, 3, 3);
        let perm = [3usize, 0, 4, 1, 2]; // old i → new perm[i]
        let run = |edges: &[(usize, usize)], feats: &Matrix, times: &Matrix| {
            let ctx = EdgeContext::with_self_loops(n, edges).unwrap();
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let h = g.leaf(feats.clone());
            let et = g.leaf(times.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = l.forward(&mut g, &b, h, &ctx, Some(et), Mode::Eval, &mut rng).unwrap();
            g.value(out).clone()
        };
        // per-edge embeddings depend only on the edge; self-loop rows follow node order
        let raw_times = random(edges.len(), 2, 7);
        let loop_times = random(n, 2, 8);
        let mut times = raw_times.clone().into_vec();
        times.extend_from_slice(loop_times.as_slice());
        let base = run(&edges, &feats, &Matrix::new(edges.len() + n, 2, times).unwrap());

        let p_edges: Vec<_> = edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let mut p_feats = Matrix::zeros(n, 3);
        let mut p_loops = Matrix::zeros(n, 2);
        for i in 0..n {
            p_feats.row_mut(perm[i]).copy_from_slice(feats.row(i));
            p_loops.row_mut(perm[i]).copy_from_slice(loop_times.row(i));
        }
        let mut times = raw_times.into_vec();
        times.extend_from_slice(p_loops.as_slice());
        let permuted = run(&p_edges, &p_feats, &Matrix::new(edges.len() + n, 2, times).unwrap());
        for i in 0..n {
            for c in 0..5 {
                assert!((base.get(i, c) - permuted.get(perm[i], c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_gradients() {
        for kind in [AttentionKind::Structural, AttentionKind::Temporal, AttentionKind::Triple] {
            let (store, l) = layer(kind, 3, 2, 21);
            let ctx = EdgeContext::with_self_loops(4, &[(0, 1), (2, 1), (3, 2), (1, 0)]).unwrap();
            let feats = random(4, 3, 1);
            let times = random(ctx.num_edges(), 2, 2);
            let readout = random(4, 5, 3);
            let report = grad_check(
                |g, vars| {
                    let b = Bound::from_vars(vars.to_vec());
                    let h = g.leaf(feats.clone());
                    let et = kind.uses_time().then(|| g.leaf(times.clone()));
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = l.forward(g, &b, h, &ctx, et, Mode::Eval, &mut rng)?;
                    let r = g.leaf(readout.clone());
                    let w = g.mul(out, r)?;
                    Ok(g.sum(w))
                },
                store.values(),
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind:?}: {report:?}");
        }
    }

    #[test]
    fn additive_layer_gradients() {
        let mut store = ParamStore::new();
        // att_dst cancels inside a neighborhood whose raw scores share a sign;
        // this draw gives mixed signs so its true gradient is not zero
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = AdditiveAttentionLayer::new(&mut store, "gat", 3, 4, small_config(), &mut rng).unwrap();
        let ctx = EdgeContext::with_self_loops(4, &[(0, 1), (2, 1), (3, 2), (1, 0)]).unwrap();
        let feats = random(4, 3, 1);
        let readout = random(4, 4, 3);
        let report = grad_check(
            |g, vars| {
                let b = Bound::from_vars(vars.to_vec());
                let h = g.leaf(feats.clone());
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = l.forward(g, &b, h, &ctx, Mode::Eval, &mut rng)?;
                let r = g.leaf(readout.clone());
                let w = g.mul(out, r)?;
                Ok(g.sum(w))
            },
            store.values(),
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let h = g.leaf(feats);
        let a = l.attention(&mut g, &b, h, &ctx).unwrap();
        for s in sums_by_dst(&g, a, &ctx) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
