//! Synthetic temporal transaction graphs with injected fraud signatures.
//!
//! Nodes arrive in order with non-decreasing time steps and attach to earlier
//! nodes by preferential attachment (edges point old → new). Fraud nodes draw
//! their in-edges only from nodes at most `fraud_burst_delta` steps older, and
//! get a Gaussian mean shift on a random subset of feature columns.

use std::path::Path;

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph_data::{dataset_paths, write_graph, Label, LoadOptions, TransactionGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_time_steps: u32,
    pub fraud_ratio: f64,
    pub feature_dim: usize,
    /// Preferential-attachment in-edges per new node.
    pub attach_degree: usize,
    /// Largest time gap on a fraud node's in-edges.
    pub fraud_burst_delta: u32,
    /// Mean offset added to the shifted feature columns of fraud nodes.
    pub feature_shift: f64,
    /// Number of shifted feature columns.
    pub shifted_features: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            n_time_steps: 49,
            fraud_ratio: 0.02,
            feature_dim: 16,
            attach_degree: 3,
            fraud_burst_delta: 1,
            feature_shift: 0.5,
            shifted_features: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Fraud count: `fraud_ratio · n_nodes` rounded half up.
    pub fn fraud_count(&self) -> usize {
        (self.fraud_ratio * self.n_nodes as f64 + 0.5).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        if self.n_nodes < 10 {
            return bad("n_nodes", format!("must be >= 10, got {}", self.n_nodes));
        }
        if self.n_time_steps == 0 {
            return bad("n_time_steps", "must be >= 1".into());
        }
        if !(self.fraud_ratio > 0.0 && self.fraud_ratio < 0.5) {
            return bad("fraud_ratio", format!("must be in (0, 0.5), got {}", self.fraud_ratio));
        }
        if self.fraud_count() == 0 {
            return bad("fraud_ratio", format!("{} of {} nodes rounds to zero fraud nodes", self.fraud_ratio, self.n_nodes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be >= 1".into());
        }
        if self.attach_degree == 0 {
            return bad("attach_degree", "must be >= 1".into());
        }
        if self.shifted_features > self.feature_dim {
            return bad(
                "shifted_features",
                format!("{} exceeds feature_dim {}", self.shifted_features, self.feature_dim),
            );
        }
        if !self.feature_shift.is_finite() {
            return bad("feature_shift", "must be finite".into());
        }
        Ok(())
    }

    /// Time step of the `k`-th node.
    pub fn timestamp(&self, k: usize) -> u32 {
        1 + (k as u64 * self.n_time_steps as u64 / self.n_nodes as u64) as u32
    }
}

/// A generated graph plus the bookkeeping needed to inspect its signatures.
#[derive(Clone, Debug)]
pub struct SynthGraph {
    pub graph: TransactionGraph,
    /// Indices of the edges that were drawn for fraud nodes.
    pub fraud_edges: Vec<usize>,
    pub shifted_columns: Vec<usize>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<TransactionGraph> {
    generate_detailed(config).map(|s| s.graph)
}

pub fn generate_detailed(config: &SynthConfig) -> Result<SynthGraph> {
    config.validate()?;
    let n = config.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let times: Vec<u32> = (0..n).map(|k| config.timestamp(k)).collect();

    // first node of each burst window, for every node
    let window_start: Vec<usize> = (0..n)
        .map(|k| times.partition_point(|&t| t.saturating_add(config.fraud_burst_delta) < times[k]))
        .collect();
    let eligible: Vec<usize> = (1..n).filter(|&k| window_start[k] < k).collect();
    let fraud_count = config.fraud_count();
    if eligible.len() < fraud_count {
        return Err(Error::Config {
            key: "fraud_burst_delta".into(),
            msg: format!(
                "only {} nodes have an earlier node within {} steps, need {fraud_count}",
                eligible.len(),
                config.fraud_burst_delta
            ),
        });
    }
    let mut is_fraud = vec![false; n];
    for &k in eligible.choose_multiple(&mut rng, fraud_count) {
        is_fraud[k] = true;
    }

    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(n * config.attach_degree);
    let mut fraud_edges = Vec::new();
    let candidates: Vec<usize> = (0..n).collect();
    for k in 1..n {
        let lo = if is_fraud[k] { window_start[k] } else { 0 };
        let pool = &candidates[lo..k];
        let m = config.attach_degree.min(pool.len());
        let picked: Vec<usize> = pool
            .choose_multiple_weighted(&mut rng, m, |&j| (degree[j] + 1) as f64)
            .map_err(|e| Error::invalid(format!("preferential attachment weights: {e}")))?
            .copied()
            .collect();
        for src in picked {
            if is_fraud[k] {
                fraud_edges.push(edges.len());
            }
            edges.push((src, k));
            degree[src] += 1;
            degree[k] += 1;
        }
    }

    let mut shifted_columns = index::sample(&mut rng, config.feature_dim, config.shifted_features).into_vec();
    shifted_columns.sort_unstable();
    let mut data = Vec::with_capacity(n * config.feature_dim);
    for k in 0..n {
        let start = data.len();
        data.extend((0..config.feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if is_fraud[k] {
            for &c in &shifted_columns {
                data[start + c] += config.feature_shift;
            }
        }
    }

    let labels = is_fraud
        .iter()
        .map(|&f| if f { Label::Illicit } else { Label::Licit })
        .collect();
    let graph = TransactionGraph::new(
        (0..n).map(|k| format!("s{k}")).collect(),
        Matrix::new(n, config.feature_dim, data)?,
        times,
        labels,
        edges,
    )?;
    Ok(SynthGraph {
        graph,
        fraud_edges,
        shifted_columns,
    })
}

/// Generates a graph and writes it to `dir` in the three-file format.
pub fn write_synthetic(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<TransactionGraph> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let graph = generate_synthetic(config)?;
    let (f, c, e) = dataset_paths(dir);
    write_graph(&graph, f, c, e, &LoadOptions::default())?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::load_graph;

    fn mean_delta(g: &TransactionGraph, edges: impl Iterator<Item = usize>) -> f64 {
        let ds: Vec<f64> = edges.map(|e| g.edge_time_delta(e).unwrap() as f64).collect();
        ds.iter().sum::<f64>() / ds.len() as f64
    }

    #[test]
    fn fraud_count_rounds_half_up() {
        let g = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(g.count_label(Label::Illicit), 40);
        assert_eq!(g.count_label(Label::Unknown), 0);
        let cfg = SynthConfig {
            n_nodes: 25,
            fraud_ratio: 0.1,
            ..SynthConfig::default()
        };
        assert_eq!(cfg.fraud_count(), 3);
        let cfg = SynthConfig {
            n_nodes: 10,
            fraud_ratio: 0.01,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            n_nodes: 300,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.features().as_slice(), b.features().as_slice());
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.labels(), b.labels());
        let c = generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn structure_is_old_to_new() {
        let g = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(g.timestamps()[0], 1);
        assert_eq!(g.max_timestamp(), 49);
        assert!(g.timestamps().windows(2).all(|w| w[0] <= w[1]));
        for &(s, d) in g.edges() {
            assert!(s < d);
        }
        assert_eq!(g.num_edges(), 3 * 1997 + 1 + 2);
    }

    #[test]
    fn zero_burst_gives_zero_deltas() {
        let cfg = SynthConfig {
            fraud_burst_delta: 0,
            ..SynthConfig::default()
        };
        let s = generate_detailed(&cfg).unwrap();
        assert!(!s.fraud_edges.is_empty());
        for &e in &s.fraud_edges {
            assert_eq!(s.graph.edge_time_delta(e).unwrap(), 0);
        }
    }

    #[test]
    fn fraud_edges_are_faster() {
        let s = generate_detailed(&SynthConfig::default()).unwrap();
        let fraud: std::collections::HashSet<usize> = s.fraud_edges.iter().copied().collect();
        let licit = (0..s.graph.num_edges()).filter(|e| !fraud.contains(e));
        let m_fraud = mean_delta(&s.graph, s.fraud_edges.iter().copied());
        let m_licit = mean_delta(&s.graph, licit);
        assert!(m_fraud <= 1.0);
        assert!(m_fraud < m_licit, "{m_fraud} vs {m_licit}");
    }

    #[test]
    fn feature_shift_lands_on_chosen_columns() {
        let cfg = SynthConfig {
            feature_shift: 3.0,
            ..SynthConfig::default()
        };
        let s = generate_detailed(&cfg).unwrap();
        let g = &s.graph;
        let col_mean = |c: usize, label: Label| {
            let rows: Vec<usize> = (0..g.num_nodes()).filter(|&i| g.labels()[i] == label).collect();
            rows.iter().map(|&i| g.features().get(i, c)).sum::<f64>() / rows.len() as f64
        };
        for c in 0..cfg.feature_dim {
            let gap = col_mean(c, Label::Illicit) - col_mean(c, Label::Licit);
            if s.shifted_columns.contains(&c) {
                assert!(gap > 2.0, "column {c}: {gap}");
            } else {
                assert!(gap.abs() < 1.0, "column {c}: {gap}");
            }
        }
    }

    #[test]
    fn writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_nodes: 50,
            fraud_ratio: 0.1,
            ..SynthConfig::default()
        };
        let g = write_synthetic(&cfg, dir.path()).unwrap();
        let (f, c, e) = dataset_paths(dir.path());
        let back = load_graph(f, c, e, &LoadOptions::default()).unwrap();
        assert_eq!(back.features().as_slice(), g.features().as_slice());
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.labels(), g.labels());
        assert_eq!(back.timestamps(), g.timestamps());
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig {
                n_nodes: 9,
                ..SynthConfig::default()
            },
            SynthConfig {
                fraud_ratio: 0.5,
                ..SynthConfig::default()
            },
            SynthConfig {
                attach_degree: 0,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config { .. })));
        }
    }
}
