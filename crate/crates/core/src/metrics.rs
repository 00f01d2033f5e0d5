//! Classification metrics, effect sizes, and the repeated-seed ablation harness.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph_data::{split_nodes, SplitAssignment, TransactionGraph};
use crate::model::{GraphContext, ModelConfig, ModelVariant};
use crate::training::{train_on_context, TrainConfig};

fn check_labels(scores: &[f64], labels: &[f64]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid(format!("labels must be 0 or 1, got {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve, computed as the Mann–Whitney statistic
/// `P(s_pos > s_neg) + ½ P(s_pos = s_neg)` with exact tie groups.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut n) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1.0 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        wins += p as f64 * neg_below as f64 + 0.5 * (p * n) as f64;
        neg_below += n;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    /// Precision of the positive (illicit) class.
    pub precision: f64,
    /// Recall of the positive (illicit) class.
    pub recall: f64,
    pub f1_macro: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics at a fixed threshold; a score `>= threshold` predicts illicit.
/// Empty denominators yield 0.
pub fn threshold_metrics(scores: &[f64], labels: &[f64], threshold: f64) -> Result<ThresholdMetrics> {
    check_labels(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let f1_pos = ratio(2 * tp, 2 * tp + fp + fneg);
    let f1_neg = ratio(2 * tn, 2 * tn + fp + fneg);
    Ok(ThresholdMetrics {
        accuracy: ratio(tp + tn, scores.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        f1_macro: 0.5 * (f1_pos + f1_neg),
    })
}

/// The five reported metrics, in table order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_macro: f64,
    pub auc: f64,
}

impl MetricRecord {
    pub const HEADER: [&'static str; 5] = ["Accuracy", "Precision", "Recall", "F1-Macro", "AUC"];

    pub fn evaluate(scores: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        let t = threshold_metrics(scores, labels, threshold)?;
        Ok(Self {
            accuracy: t.accuracy,
            precision: t.precision,
            recall: t.recall,
            f1_macro: t.f1_macro,
            auc: roc_auc(scores, labels)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1_macro, self.auc]
    }

    /// Header plus one row, comma-delimited.
    pub fn to_table(&self) -> String {
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        let cells: Vec<String> = self.values().iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
        out
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Cohen's d with pooled standard deviation. Zero pooled variance gives 0
/// for equal means and ±∞ otherwise.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("cohens_d needs at least two values per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (sample_std(a), sample_std(b));
    let pooled = (((na - 1.0) * sa * sa + (nb - 1.0) * sb * sb) / (na + nb - 2.0)).sqrt();
    let diff = mean(a) - mean(b);
    if diff == 0.0 {
        return Ok(0.0);
    }
    if pooled == 0.0 {
        return Ok(if diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY });
    }
    Ok(diff / pooled)
}

/// Per-seed metrics for one variant.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub variant: ModelVariant,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricRecord>,
    /// Runs that failed, with the reason.
    pub excluded: Vec<(u64, String)>,
}

impl RunReport {
    pub fn metric(&self, pick: impl Fn(&MetricRecord) -> f64) -> Vec<f64> {
        self.runs.iter().map(pick).collect()
    }

    pub fn aucs(&self) -> Vec<f64> {
        self.metric(|r| r.auc)
    }

    /// `(mean, sample std)` for each metric in table order.
    pub fn summary(&self) -> [(f64, f64); 5] {
        std::array::from_fn(|k| {
            let xs: Vec<f64> = self.runs.iter().map(|r| r.values()[k]).collect();
            (mean(&xs), sample_std(&xs))
        })
    }
}

/// Ablation output: one row per variant plus the pairwise effect sizes.
#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<RunReport>,
    /// `cohens_d[i][j] = d(AUC_i, AUC_j)`.
    pub cohens_d: Vec<Vec<f64>>,
}

/// Pairwise Cohen's d matrix over AUC vectors.
pub fn cohens_d_matrix(rows: &[RunReport]) -> Result<Vec<Vec<f64>>> {
    let aucs: Vec<Vec<f64>> = rows.iter().map(RunReport::aucs).collect();
    aucs.iter()
        .map(|a| aucs.iter().map(|b| cohens_d(a, b)).collect())
        .collect()
}

impl AblationReport {
    /// Delimited table (mean and std per metric) followed by a blank line and
    /// the square Cohen's d block.
    pub fn to_table(&self) -> String {
        let mut out = String::from("Model");
        for h in MetricRecord::HEADER {
            let _ = write!(out, ",{h}_mean,{h}_std");
        }
        out.push_str(",Runs,Excluded\n");
        for row in &self.rows {
            let _ = write!(out, "{}", row.variant);
            for (m, s) in row.summary() {
                let _ = write!(out, ",{m:.6},{s:.6}");
            }
            let _ = writeln!(out, ",{},{}", row.runs.len(), row.excluded.len());
        }
        out.push('\n');
        out.push_str("CohensD_AUC");
        for row in &self.rows {
            let _ = write!(out, ",{}", row.variant);
        }
        out.push('\n');
        for (row, ds) in self.rows.iter().zip(&self.cohens_d) {
            let _ = write!(out, "{}", row.variant);
            for d in ds {
                let _ = write!(out, ",{d:.3}");
            }
            out.push('\n');
        }
        out
    }
}

/// How each repeat obtains its split.
#[derive(Clone, Debug)]
pub enum SplitMode {
    /// Same split for every seed; seeds vary initialization and dropout.
    Fixed(SplitAssignment),
    /// Fresh split per seed.
    PerSeed { ratios: (f64, f64, f64), stratified: bool },
}

/// Trains every variant under every seed and evaluates on validation.
///
/// Runs execute in parallel; results are merged in (variant, seed) order.
/// Failed runs are excluded and listed in the report.
pub fn ablation_run(
    graph: &TransactionGraph,
    split: &SplitMode,
    seeds: &[u64],
    variants: &[ModelVariant],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<AblationReport> {
    if seeds.len() < 2 {
        return Err(Error::invalid("ablation needs at least two seeds"));
    }
    let ctx = GraphContext::new(graph, model_config.temporal.d_pos)?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Result<MetricRecord>> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let split = match split {
                SplitMode::Fixed(s) => s.clone(),
                SplitMode::PerSeed { ratios, stratified } => split_nodes(graph, *ratios, seed, *stratified)?,
            };
            let cfg = TrainConfig { seed, ..train_config.clone() };
            let outcome = train_on_context(graph, &ctx, &split, variants[v], model_config, &cfg)?;
            Ok(outcome.validation)
        })
        .collect();

    let mut rows: Vec<RunReport> = variants
        .iter()
        .map(|&variant| RunReport {
            variant,
            seeds: Vec::new(),
            runs: Vec::new(),
            excluded: Vec::new(),
        })
        .collect();
    for (&(v, seed), res) in jobs.iter().zip(results) {
        match res {
            Ok(m) => {
                rows[v].seeds.push(seed);
                rows[v].runs.push(m);
            }
            Err(e) => rows[v].excluded.push((seed, e.to_string())),
        }
    }
    let cohens_d = cohens_d_matrix(&rows)?;
    Ok(AblationReport { rows, cohens_d })
}
