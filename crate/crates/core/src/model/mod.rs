//! Full networks behind one forward contract: node features, edges and
//! timestamps in, one illicit probability per node out.

mod checkpoint;
pub mod params;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AdditiveAttentionLayer, AttentionConfig, AttentionKind, EdgeContext, TripleAttentionLayer};
use crate::autodiff::{Graph, Indices, Matrix, Mode, Var};
use crate::error::{Error, Result};
use crate::graph_data::TransactionGraph;
use crate::temporal::{TemporalConfig, TemporalEmbedding, TemporalInputs};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
use params::{Bound, Linear, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    /// Classic additive GAT, no temporal information.
    BGat,
    /// Dot-product structural attention only.
    SGat,
    /// Temporal attention only.
    TGat,
    /// Structural + temporal + global attention with adaptive fusion.
    Atgat,
    Gcn,
    LogReg,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::BGat => "B-GAT",
            Architecture::SGat => "S-GAT",
            Architecture::TGat => "T-GAT",
            Architecture::Atgat => "ATGAT",
            Architecture::Gcn => "GCN",
            Architecture::LogReg => "LR",
        }
    }

    pub fn uses_time(self) -> bool {
        matches!(self, Architecture::TGat | Architecture::Atgat)
    }

    pub fn is_gat(self) -> bool {
        matches!(self, Architecture::BGat | Architecture::SGat | Architecture::TGat | Architecture::Atgat)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossMode {
    Plain,
    Weighted,
}

/// Architecture plus loss weighting; displayed as e.g. `ATGAT-W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelVariant {
    pub arch: Architecture,
    pub loss: LossMode,
}

impl ModelVariant {
    pub const fn new(arch: Architecture, loss: LossMode) -> Self {
        Self { arch, loss }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.arch.name())?;
        if self.loss == LossMode::Weighted {
            f.write_str("-W")?;
        }
        Ok(())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let (base, loss) = match upper.strip_suffix("-W") {
            Some(b) => (b, LossMode::Weighted),
            None => (upper.as_str(), LossMode::Plain),
        };
        let arch = match base {
            "B-GAT" => Architecture::BGat,
            "S-GAT" => Architecture::SGat,
            "T-GAT" => Architecture::TGat,
            "ATGAT" => Architecture::Atgat,
            "GCN" => Architecture::Gcn,
            "LR" | "LOGREG" => Architecture::LogReg,
            _ => return Err(Error::invalid(format!("unknown model variant `{s}`"))),
        };
        Ok(Self { arch, loss })
    }
}

/// Architecture hyperparameters shared by every variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub attention: AttentionConfig,
    pub temporal: TemporalConfig,
    /// Recompute temporal embeddings for every layer instead of sharing one pass.
    pub recompute_temporal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            attention: AttentionConfig::default(),
            temporal: TemporalConfig::default(),
            recompute_temporal: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid("hidden width and layer count must be >= 1"));
        }
        self.attention.validate()?;
        self.temporal.validate()
    }
}

/// Symmetric-normalized propagation `D^-1/2 (A + I) D^-1/2` with edges
/// taken as undirected.
#[derive(Clone, Debug)]
pub struct GcnPropagation {
    pub target: Indices,
    pub source: Indices,
    /// One coefficient per (target, source) pair.
    pub coef: Matrix,
}

impl GcnPropagation {
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut pairs = BTreeSet::new();
        for &(s, d) in edges {
            if s != d {
                pairs.insert((s, d));
                pairs.insert((d, s));
            }
        }
        for i in 0..num_nodes {
            pairs.insert((i, i));
        }
        let mut degree = vec![0usize; num_nodes];
        for &(t, _) in &pairs {
            degree[t] += 1;
        }
        let coef: Vec<f64> = pairs
            .iter()
            .map(|&(t, s)| 1.0 / ((degree[t] * degree[s]) as f64).sqrt())
            .collect();
        Self {
            target: pairs.iter().map(|p| p.0).collect::<Vec<_>>().into(),
            source: pairs.iter().map(|p| p.1).collect::<Vec<_>>().into(),
            coef: Matrix::column(&coef),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var, num_nodes: usize) -> Result<Var> {
        let width = g.shape(x).1;
        let gathered = g.gather_rows(x, &self.source)?;
        let coef = g.leaf(self.coef.clone());
        let coef = g.repeat_cols(coef, width)?;
        let weighted = g.mul(gathered, coef)?;
        g.scatter_add_rows(weighted, &self.target, num_nodes)
    }
}

/// Everything a forward pass needs from a graph, precomputed once.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub features: Matrix,
    pub edges: EdgeContext,
    pub temporal: TemporalInputs,
    pub gcn: GcnPropagation,
}

impl GraphContext {
    pub fn new(graph: &TransactionGraph, d_pos: usize) -> Result<Self> {
        let edges = EdgeContext::with_self_loops(graph.num_nodes(), graph.edges())?;
        let ts = graph.timestamps();
        let pairs: Vec<(u32, u32)> = edges.pairs().iter().map(|&(s, d)| (ts[s], ts[d])).collect();
        Ok(Self {
            features: graph.features().clone(),
            temporal: TemporalInputs::new(&pairs, d_pos)?,
            gcn: GcnPropagation::new(graph.num_nodes(), graph.edges()),
            edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug)]
pub enum GatLayer {
    Dot(TripleAttentionLayer),
    Additive(AdditiveAttentionLayer),
}

#[derive(Clone, Debug)]
pub enum Network {
    Gat {
        input: Linear,
        temporal: Option<TemporalEmbedding>,
        layers: Vec<GatLayer>,
        head: Linear,
    },
    Gcn {
        weights: Vec<(params::ParamId, params::ParamId)>,
        head: Linear,
    },
    LogReg {
        head: Linear,
    },
}

/// A variant's parameters and the structure that consumes them.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: ModelVariant,
    pub config: ModelConfig,
    pub input_dim: usize,
    pub seed: u64,
    pub params: ParamStore,
    pub network: Network,
}

impl Model {
    /// Fresh parameters: Glorot-uniform weights, zero biases, unit layer-norm
    /// gains. Fully determined by `seed`.
    pub fn new(variant: ModelVariant, config: ModelConfig, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hidden = config.hidden;
        let network = match variant.arch {
            Architecture::LogReg => Network::LogReg {
                head: Linear::new(&mut store, "head", input_dim, 1, true, &mut rng),
            },
            Architecture::Gcn => {
                let mut weights = Vec::with_capacity(config.layers);
                let mut d_in = input_dim;
                for k in 0..config.layers {
                    let w = store.glorot(format!("gcn.{k}.weight"), d_in, hidden, &mut rng);
                    let b = store.zeros(format!("gcn.{k}.bias"), 1, hidden);
                    weights.push((w, b));
                    d_in = hidden;
                }
                Network::Gcn {
                    weights,
                    head: Linear::new(&mut store, "head", hidden, 1, true, &mut rng),
                }
            }
            arch => {
                let input = Linear::new(&mut store, "input", input_dim, hidden, true, &mut rng);
                let temporal = if arch.uses_time() {
                    Some(TemporalEmbedding::new(&mut store, "time", config.temporal, &mut rng)?)
                } else {
                    None
                };
                let d_t = temporal.as_ref().map_or(0, |t| t.config.d_t);
                let mut layers = Vec::with_capacity(config.layers);
                for k in 0..config.layers {
                    let prefix = format!("layers.{k}");
                    let layer = match arch {
                        Architecture::BGat => GatLayer::Additive(AdditiveAttentionLayer::new(
                            &mut store,
                            &prefix,
                            hidden,
                            hidden,
                            config.attention,
                            &mut rng,
                        )?),
                        _ => {
                            let kind = match arch {
                                Architecture::SGat => AttentionKind::Structural,
                                Architecture::TGat => AttentionKind::Temporal,
                                _ => AttentionKind::Triple,
                            };
                            GatLayer::Dot(TripleAttentionLayer::new(
                                &mut store,
                                &prefix,
                                kind,
                                hidden,
                                hidden,
                                d_t,
                                config.attention,
                                &mut rng,
                            )?)
                        }
                    };
                    layers.push(layer);
                }
                Network::Gat {
                    input,
                    temporal,
                    layers,
                    head: Linear::new(&mut store, "head", hidden, 1, true, &mut rng),
                }
            }
        };
        Ok(Self {
            variant,
            config,
            input_dim,
            seed,
            params: store,
            network,
        })
    }

    /// Forces every fused attention layer to constant fusion weights
    /// (or restores the learned fusion with `None`).
    pub fn set_fusion_override(&mut self, weights: Option<[f64; 3]>) {
        if let Network::Gat { layers, .. } = &mut self.network {
            for layer in layers {
                if let GatLayer::Dot(l) = layer {
                    l.fusion_override = weights;
                }
            }
        }
    }

    /// N×1 column of probabilities, recorded on `g`.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        ctx: &GraphContext,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        if ctx.features.cols() != self.input_dim {
            return Err(Error::shape(
                "model forward",
                format!("graph has {} features, model expects {}", ctx.features.cols(), self.input_dim),
            ));
        }
        if ctx.num_nodes() == 0 {
            return Err(Error::invalid("forward pass over an empty graph"));
        }
        let x = g.leaf(ctx.features.clone());
        let logits = match &self.network {
            Network::LogReg { head } => head.forward(g, b, x)?,
            Network::Gcn { weights, head } => {
                let mut h = x;
                for (k, &(w, bias)) in weights.iter().enumerate() {
                    let lin = g.matmul(h, b.var(w))?;
                    let prop = self.propagate(g, ctx, lin)?;
                    h = g.add_row(prop, b.var(bias))?;
                    if k + 1 < weights.len() {
                        h = g.relu(h);
                        h = g.dropout(h, self.config.attention.dropout, mode, rng)?;
                    }
                }
                head.forward(g, b, h)?
            }
            Network::Gat {
                input,
                temporal,
                layers,
                head,
            } => {
                let mut h = input.forward(g, b, x)?;
                let shared = match temporal {
                    Some(t) if !self.config.recompute_temporal => Some(t.forward(g, b, &ctx.temporal, mode, rng)?),
                    _ => None,
                };
                for (k, layer) in layers.iter().enumerate() {
                    h = match layer {
                        GatLayer::Additive(l) => l.forward(g, b, h, &ctx.edges, mode, rng)?,
                        GatLayer::Dot(l) => {
                            let e_time = match (temporal, shared) {
                                (_, Some(e)) => Some(e),
                                (Some(t), None) => Some(t.forward(g, b, &ctx.temporal, mode, rng)?),
                                (None, None) => None,
                            };
                            l.forward(g, b, h, &ctx.edges, e_time, mode, rng)?
                        }
                    };
                    if k + 1 < layers.len() {
                        h = g.relu(h);
                    }
                }
                head.forward(g, b, h)?
            }
        };
        Ok(g.sigmoid(logits))
    }

    fn propagate(&self, g: &mut Graph, ctx: &GraphContext, x: Var) -> Result<Var> {
        ctx.gcn.apply(g, x, ctx.num_nodes())
    }

    /// Eval-mode probabilities as a plain vector.
    pub fn predict(&self, ctx: &GraphContext) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        // eval mode never draws
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut g, &b, ctx, Mode::Eval, &mut rng)?;
        Ok(g.value(out).as_slice().to_vec())
    }
}

/// Initializes a model for `variant`; alias of [`Model::new`].
pub fn init_params(variant: ModelVariant, config: ModelConfig, input_dim: usize, seed: u64) -> Result<Model> {
    Model::new(variant, config, input_dim, seed)
}

/// Convenience: eval-mode probabilities of `model` on `graph`.
pub fn predict_graph(model: &Model, graph: &TransactionGraph) -> Result<Vec<f64>> {
    let ctx = GraphContext::new(graph, model.config.temporal.d_pos)?;
    model.predict(&ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::Label;

    #[test]
    fn variant_names_round_trip() {
        for name in ["B-GAT", "S-GAT", "T-GAT", "ATGAT", "ATGAT-W", "GCN", "GCN-W", "LR", "LR-W", "B-GAT-W"] {
            let v: ModelVariant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        assert!("MLP".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn gcn_propagation_coefficients() {
        // path 0 - 1 - 2: degrees with self loops 2, 3, 2
        let p = GcnPropagation::new(3, &[(0, 1), (2, 1)]);
        let pairs: Vec<_> = p.target.iter().zip(p.source.iter()).map(|(&t, &s)| (t, s)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)]);
        let c = p.coef.as_slice();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((c[1] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((c[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let v = ModelVariant::new(Architecture::Atgat, LossMode::Weighted);
        let a = Model::new(v, ModelConfig::default(), 8, 5).unwrap();
        let b = Model::new(v, ModelConfig::default(), 8, 5).unwrap();
        assert_eq!(a.params, b.params);
        let c = Model::new(v, ModelConfig::default(), 8, 6).unwrap();
        assert_ne!(a.params, c.params);
        for (name, m) in a.params.iter() {
            if name.ends_with(".bias") {
                assert!(m.as_slice().iter().all(|&x| x == 0.0), "{name}");
            }
            if name.ends_with("weight") || name.ends_with("query") || name.ends_with("key") {
                let bound = params::glorot_bound(m.rows(), m.cols());
                assert!(m.as_slice().iter().all(|x| x.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn rejects_feature_mismatch() {
        let graph = TransactionGraph::new(
            vec!["a".into()],
            Matrix::zeros(1, 3),
            vec![1],
            vec![Label::Licit],
            vec![],
        )
        .unwrap();
        let m = Model::new(ModelVariant::new(Architecture::SGat, LossMode::Plain), ModelConfig::default(), 4, 0).unwrap();
        assert!(predict_graph(&m, &graph).is_err());
    }
}
