//! Directed temporal transaction graphs and Elliptic-style ingestion.
//!
//! Three delimited text files describe a graph:
//!
//! - features: `id, time step, f_1, ..., f_d` per node; an optional header
//!   row is detected by a non-integer time-step field;
//! - classes: `id, class token`; tokens map to illicit / licit / unknown;
//! - edges: `src id, dst id`, directed along the flow of funds.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Licit,
    Illicit,
    Unknown,
}

impl Label {
    /// `Some(0.0)` / `Some(1.0)` for known labels.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Licit => Some(0.0),
            Label::Illicit => Some(1.0),
            Label::Unknown => None,
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

/// Compressed adjacency: neighbors and edge ids grouped by node.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
}

impl Adjacency {
    /// Groups edges by `key(edge)`, listing `other(edge)` as the neighbor.
    fn build(n: usize, edges: &[(usize, usize)], incoming: bool) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(s, d) in edges {
            counts[if incoming { d } else { s } + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut neighbors = vec![0; edges.len()];
        let mut edge_ids = vec![0; edges.len()];
        for (e, &(s, d)) in edges.iter().enumerate() {
            let (key, other) = if incoming { (d, s) } else { (s, d) };
            let slot = cursor[key];
            neighbors[slot] = other;
            edge_ids[slot] = e;
            cursor[key] += 1;
        }
        Self {
            offsets,
            neighbors,
            edge_ids,
        }
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn edge_ids(&self, node: usize) -> &[usize] {
        &self.edge_ids[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }
}

/// Directed temporal transaction graph.
///
/// Invariants, checked by [`TransactionGraph::new`]: edge endpoints are in
/// range and not self-loops, all nodes share the same feature width, and
/// timestamps are at least 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TransactionGraph {
    node_ids: Vec<String>,
    features: Matrix,
    timestamps: Vec<u32>,
    labels: Vec<Label>,
    edges: Vec<(usize, usize)>,
    in_adjacency: Adjacency,
    out_adjacency: Adjacency,
}

impl TransactionGraph {
    pub fn new(
        node_ids: Vec<String>,
        features: Matrix,
        timestamps: Vec<u32>,
        labels: Vec<Label>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if features.rows() != n || timestamps.len() != n || labels.len() != n {
            return Err(Error::invalid(format!(
                "{n} node ids, {} feature rows, {} timestamps, {} labels",
                features.rows(),
                timestamps.len(),
                labels.len()
            )));
        }
        if let Some(i) = timestamps.iter().position(|&t| t == 0) {
            return Err(Error::invalid(format!("node {} has time step 0", node_ids[i])));
        }
        for (e, &(s, d)) in edges.iter().enumerate() {
            if s >= n || d >= n {
                return Err(Error::invalid(format!("edge {e} ({s}, {d}) out of range for {n} nodes")));
            }
            if s == d {
                return Err(Error::invalid(format!("edge {e} is a self-loop on {}", node_ids[s])));
            }
        }
        let in_adjacency = Adjacency::build(n, &edges, true);
        let out_adjacency = Adjacency::build(n, &edges, false);
        Ok(Self {
            node_ids,
            features,
            timestamps,
            labels,
            edges,
            in_adjacency,
            out_adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn timestamps(&self) -> &[u32] {
        &self.timestamps
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn in_adjacency(&self) -> &Adjacency {
        &self.in_adjacency
    }

    pub fn out_adjacency(&self) -> &Adjacency {
        &self.out_adjacency
    }

    pub fn max_timestamp(&self) -> u32 {
        self.timestamps.iter().copied().max().unwrap_or(0)
    }

    /// Indices of nodes with a known label, ascending.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.labels[i].is_known()).collect()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// 0/1 targets for `idx`; fails if any of them is unlabeled.
    pub fn targets(&self, idx: &[usize]) -> Result<Vec<f64>> {
        idx.iter()
            .map(|&i| {
                self.labels[i]
                    .target()
                    .ok_or_else(|| Error::invalid(format!("node {} is unlabeled", self.node_ids[i])))
            })
            .collect()
    }

    /// `|t_src - t_dst|` for edge `edge`.
    pub fn edge_time_delta(&self, edge: usize) -> Result<u32> {
        let &(s, d) = self
            .edges
            .get(edge)
            .ok_or_else(|| Error::invalid(format!("edge index {edge} out of {}", self.edges.len())))?;
        Ok(self.timestamps[s].abs_diff(self.timestamps[d]))
    }

    /// Restricts to labeled nodes, keeping edges whose endpoints are both
    /// labeled. Relative node order is preserved.
    pub fn induced_labeled_subgraph(&self) -> TransactionGraph {
        let keep = self.labeled_nodes();
        self.induced_subgraph(&keep)
    }

    /// Induced subgraph on `keep` (ascending, distinct indices).
    pub fn induced_subgraph(&self, keep: &[usize]) -> TransactionGraph {
        let mut remap = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(s, d)| {
                let (ns, nd) = (remap[s], remap[d]);
                (ns != usize::MAX && nd != usize::MAX).then_some((ns, nd))
            })
            .collect();
        Self::new(
            keep.iter().map(|&i| self.node_ids[i].clone()).collect(),
            self.features.select_rows(keep),
            keep.iter().map(|&i| self.timestamps[i]).collect(),
            keep.iter().map(|&i| self.labels[i]).collect(),
            edges,
        )
        .expect("induced subgraph of a valid graph is valid")
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select_feature_columns(&self, columns: &[usize]) -> Result<TransactionGraph> {
        let d = self.feature_dim();
        if let Some(&bad) = columns.iter().find(|&&c| c >= d) {
            return Err(Error::invalid(format!("feature column {bad} out of {d}")));
        }
        let mut data = Vec::with_capacity(self.num_nodes() * columns.len());
        for i in 0..self.num_nodes() {
            let row = self.features.row(i);
            data.extend(columns.iter().map(|&c| row[c]));
        }
        let mut out = self.clone();
        out.features = Matrix::new(self.num_nodes(), columns.len(), data)?;
        Ok(out)
    }

    /// Per-column standardization with mean and std fitted on `fit_idx` only.
    /// Constant columns are centered but not rescaled.
    pub fn standardized(&self, fit_idx: &[usize]) -> Result<TransactionGraph> {
        if fit_idx.is_empty() {
            return Err(Error::invalid("cannot fit standardization on zero nodes"));
        }
        let d = self.feature_dim();
        let n = fit_idx.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in fit_idx {
            for (m, v) in mean.iter_mut().zip(self.features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; d];
        for &i in fit_idx {
            for ((s, v), m) in std.iter_mut().zip(self.features.row(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        std.iter_mut().for_each(|s| {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        });
        let mut out = self.clone();
        for i in 0..self.num_nodes() {
            for ((v, m), s) in out.features.row_mut(i).iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Parsing options for the three-file format.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub delimiter: char,
    pub illicit_token: String,
    pub licit_token: String,
    /// Feature columns to keep (0-based, after id and time step). `None` keeps all.
    pub feature_columns: Option<Vec<usize>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: ',',
            illicit_token: "1".into(),
            licit_token: "2".into(),
            feature_columns: None,
        }
    }
}

impl LoadOptions {
    fn label_for(&self, token: &str) -> Label {
        if token == self.illicit_token {
            Label::Illicit
        } else if token == self.licit_token {
            Label::Licit
        } else {
            Label::Unknown
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with their 1-based line numbers, split on `delim`.
fn rows<'a>(text: &'a str, delim: char) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(move |(i, l)| (i + 1, l.split(delim).map(str::trim).collect()))
}

/// Loads a graph from features, classes and edges files.
pub fn load_graph(
    features_path: impl AsRef<Path>,
    classes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<TransactionGraph> {
    let (fp, cp, ep) = (features_path.as_ref(), classes_path.as_ref(), edges_path.as_ref());

    let text = read_to_string(fp)?;
    let mut node_ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for (k, (line, fields)) in rows(&text, opts.delimiter).enumerate() {
        if fields.len() < 2 {
            return Err(parse_err(fp, line, "expected id, time step and features"));
        }
        let step = fields[1].parse::<u32>();
        if k == 0 && step.is_err() {
            continue;
        }
        let step = step.map_err(|_| parse_err(fp, line, format!("bad time step `{}`", fields[1])))?;
        if step == 0 {
            return Err(parse_err(fp, line, "time steps start at 1"));
        }
        let d = fields.len() - 2;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(parse_err(fp, line, format!("ragged row: {d} features, expected {w}")))
            }
            _ => {}
        }
        let id = fields[0].to_string();
        if index.insert(id.clone(), node_ids.len()).is_some() {
            return Err(parse_err(fp, line, format!("duplicate node id `{id}`")));
        }
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(fp, line, format!("bad feature value `{f}`")))?;
            data.push(v);
        }
        node_ids.push(id);
        timestamps.push(step);
    }
    let n = node_ids.len();
    let features = Matrix::new(n, width.unwrap_or(0), data)?;

    let text = read_to_string(cp)?;
    let mut labels = vec![Label::Unknown; n];
    for (k, (line, fields)) in rows(&text, opts.delimiter).enumerate() {
        if fields.len() != 2 {
            return Err(parse_err(cp, line, format!("expected 2 fields, got {}", fields.len())));
        }
        let Some(&i) = index.get(fields[0]) else {
            if k == 0 && fields[0].parse::<f64>().is_err() {
                continue;
            }
            return Err(parse_err(cp, line, format!("unknown node id `{}`", fields[0])));
        };
        labels[i] = opts.label_for(fields[1]);
    }

    let text = read_to_string(ep)?;
    let mut edges = Vec::new();
    for (k, (line, fields)) in rows(&text, opts.delimiter).enumerate() {
        if fields.len() != 2 {
            return Err(parse_err(ep, line, format!("expected 2 fields, got {}", fields.len())));
        }
        let (src, dst) = (index.get(fields[0]), index.get(fields[1]));
        if k == 0 && src.is_none() && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let lookup = |id: &str, found: Option<&usize>| {
            found.copied().ok_or_else(|| Error::DanglingEdge {
                path: ep.to_path_buf(),
                line,
                id: id.to_string(),
            })
        };
        let s = lookup(fields[0], src)?;
        let d = lookup(fields[1], dst)?;
        if s == d {
            return Err(parse_err(ep, line, format!("self-loop on `{}`", fields[0])));
        }
        edges.push((s, d));
    }

    let graph = TransactionGraph::new(node_ids, features, timestamps, labels, edges)?;
    match &opts.feature_columns {
        Some(cols) => graph.select_feature_columns(cols),
        None => Ok(graph),
    }
}

/// Paths of the three files inside `dir`, using fixed names.
pub fn dataset_paths(dir: impl AsRef<Path>) -> (PathBuf, PathBuf, PathBuf) {
    let dir = dir.as_ref();
    (
        dir.join("txs_features.csv"),
        dir.join("txs_classes.csv"),
        dir.join("txs_edgelist.csv"),
    )
}

/// Writes `graph` in the three-file format with header rows.
pub fn write_graph(
    graph: &TransactionGraph,
    features_path: impl AsRef<Path>,
    classes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<()> {
    let delim = opts.delimiter;
    let write = |path: &Path, body: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    };

    write(features_path.as_ref(), &|w| {
        write!(w, "txId{delim}Time step")?;
        for c in 0..graph.feature_dim() {
            write!(w, "{delim}feature_{}", c + 1)?;
        }
        writeln!(w)?;
        for i in 0..graph.num_nodes() {
            write!(w, "{}{delim}{}", graph.node_ids[i], graph.timestamps[i])?;
            for v in graph.features.row(i) {
                write!(w, "{delim}{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    write(classes_path.as_ref(), &|w| {
        writeln!(w, "txId{delim}class")?;
        for i in 0..graph.num_nodes() {
            let token = match graph.labels[i] {
                Label::Illicit => opts.illicit_token.as_str(),
                Label::Licit => opts.licit_token.as_str(),
                Label::Unknown => "unknown",
            };
            writeln!(w, "{}{delim}{token}", graph.node_ids[i])?;
        }
        Ok(())
    })?;
    write(edges_path.as_ref(), &|w| {
        writeln!(w, "txId1{delim}txId2")?;
        for &(s, d) in &graph.edges {
            writeln!(w, "{}{delim}{}", graph.node_ids[s], graph.node_ids[d])?;
        }
        Ok(())
    })
}

/// Disjoint train / validation / held-out partition of labeled nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub held_idx: Vec<usize>,
    pub seed: u64,
}

/// Part sizes: floor for train and validation, remainder to held-out.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let train = ((a * n as f64) + 1e-9).floor() as usize;
    let val = (((b * n as f64) + 1e-9).floor() as usize).min(n - train);
    Ok((train, val, n - train - val))
}

/// Shuffles the labeled nodes under `seed` and cuts them by `ratios`.
///
/// With `stratified`, each class is shuffled and cut separately so both
/// parts keep the class ratio.
pub fn split_nodes(
    graph: &TransactionGraph,
    ratios: (f64, f64, f64),
    seed: u64,
    stratified: bool,
) -> Result<SplitAssignment> {
    let labeled = graph.labeled_nodes();
    if labeled.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 labeled nodes to split, found {}",
            labeled.len()
        )));
    }
    split_sizes(labeled.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        let (pos, neg): (Vec<usize>, Vec<usize>) =
            labeled.iter().partition(|&&i| graph.labels[i] == Label::Illicit);
        vec![pos, neg]
    } else {
        vec![labeled]
    };
    let mut out = SplitAssignment {
        train_idx: Vec::new(),
        val_idx: Vec::new(),
        held_idx: Vec::new(),
        seed,
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let (t, v, _) = split_sizes(group.len(), ratios)?;
        out.train_idx.extend_from_slice(&group[..t]);
        out.val_idx.extend_from_slice(&group[t..t + v]);
        out.held_idx.extend_from_slice(&group[t + v..]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TransactionGraph {
        TransactionGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            Matrix::from_rows(&[[1.0, 0.5], [2.0, -1.0], [0.0, 3.0]]).unwrap(),
            vec![5, 5, 1],
            vec![Label::Licit, Label::Illicit, Label::Unknown],
            vec![(0, 1), (1, 2)],
        )
        .unwrap()
    }

    #[test]
    fn adjacency_reconstructs_edges() {
        let g = fixture();
        let mut rebuilt = Vec::new();
        for v in 0..g.num_nodes() {
            for (&u, &e) in g.in_adjacency().neighbors(v).iter().zip(g.in_adjacency().edge_ids(v)) {
                assert_eq!(g.edges()[e], (u, v));
                rebuilt.push((u, v));
            }
        }
        rebuilt.sort();
        let mut edges = g.edges().to_vec();
        edges.sort();
        assert_eq!(rebuilt, edges);
        assert_eq!(g.out_adjacency().neighbors(0), &[1]);
        assert_eq!(g.out_adjacency().degree(2), 0);
    }

    #[test]
    fn rejects_invalid_graphs() {
        let base = fixture();
        let mk = |edges, ts| {
            TransactionGraph::new(
                base.node_ids.clone(),
                base.features.clone(),
                ts,
                base.labels.clone(),
                edges,
            )
        };
        assert!(mk(vec![(0, 3)], vec![1, 1, 1]).is_err());
        assert!(mk(vec![(1, 1)], vec![1, 1, 1]).is_err());
        assert!(mk(vec![], vec![0, 1, 1]).is_err());
    }

    #[test]
    fn time_delta() {
        let g = fixture();
        assert_eq!(g.edge_time_delta(0).unwrap(), 0);
        assert_eq!(g.edge_time_delta(1).unwrap(), 4);
        assert!(g.edge_time_delta(2).is_err());

        let g = TransactionGraph::new(
            vec!["x".into(), "y".into()],
            Matrix::zeros(2, 1),
            vec![1, 49],
            vec![Label::Licit; 2],
            vec![(0, 1), (1, 0)],
        )
        .unwrap();
        assert_eq!(g.edge_time_delta(0).unwrap(), 48);
        assert_eq!(g.edge_time_delta(1).unwrap(), 48);
    }

    #[test]
    fn labeled_subgraph_drops_unknown() {
        let g = fixture().induced_labeled_subgraph();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 1);

        let g = TransactionGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            Matrix::zeros(3, 1),
            vec![1, 2, 3],
            vec![Label::Licit, Label::Unknown, Label::Illicit],
            vec![(0, 1)],
        )
        .unwrap()
        .induced_labeled_subgraph();
        assert_eq!((g.num_nodes(), g.num_edges()), (2, 0));
    }

    #[test]
    fn all_labeled_subgraph_is_identity() {
        let g = fixture().induced_labeled_subgraph();
        assert_eq!(g.induced_labeled_subgraph(), g);
    }

    #[test]
    fn split_size_rule() {
        assert_eq!(split_sizes(46_564, (0.8, 0.1, 0.1)).unwrap(), (37_251, 4_656, 4_657));
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), (8, 1, 1));
        assert!(split_sizes(10, (0.8, 0.1, 0.2)).is_err());
    }

    #[test]
    fn standardization_uses_fit_rows_only() {
        let g = fixture();
        let s = g.standardized(&[0, 1]).unwrap();
        // column 0 over rows {0,1}: mean 1.5, std 0.5
        assert_eq!(s.features().get(0, 0), -1.0);
        assert_eq!(s.features().get(1, 0), 1.0);
        assert_eq!(s.features().get(2, 0), -3.0);
    }

    #[test]
    fn column_subset() {
        let g = fixture().select_feature_columns(&[1]).unwrap();
        assert_eq!(g.features().as_slice(), &[0.5, -1.0, 3.0]);
        assert!(fixture().select_feature_columns(&[2]).is_err());
    }
}
