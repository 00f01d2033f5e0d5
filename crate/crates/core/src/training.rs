//! Class weighting, learning-rate schedule, AdamW, and the full-batch
//! training loop.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Matrix, Mode, Var};
use crate::error::{Error, Result};
use crate::graph_data::{SplitAssignment, TransactionGraph};
use crate::metrics::{roc_auc, threshold_metrics, MetricRecord};
use crate::model::{GraphContext, LossMode, Model, ModelConfig, ModelVariant};

/// Positive-class weight `N_neg / N_pos` over 0/1 training labels.
pub fn class_weight(labels: &[f64]) -> Result<f64> {
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    if pos == 0 {
        return Err(Error::invalid("training split has no illicit nodes; class weight undefined"));
    }
    Ok((labels.len() - pos) as f64 / pos as f64)
}

/// Mean class-weighted binary cross-entropy, recorded on `g`.
pub fn weighted_bce(g: &mut Graph, probs: Var, labels: &[f64], w_pos: f64) -> Result<Var> {
    g.weighted_bce(probs, labels, w_pos)
}

/// Cosine-annealed rate `lr0 · (1 + cos(π·epoch/total)) / 2`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 || epoch > total {
        return Err(Error::invalid(format!("epoch {epoch} outside schedule of {total}")));
    }
    Ok(lr0 * (1.0 + (PI * epoch as f64 / total as f64).cos()) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update: decoupled weight decay, then the bias-corrected Adam
/// step. Fails without touching `params` if any gradient is non-finite.
pub fn adamw_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut OptimizerState,
    lr: f64,
    hyper: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adamw_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (k, (p, gr)) in params.iter().zip(grads).enumerate() {
        if p.shape() != gr.shape() {
            return Err(Error::shape("adamw_step", format!("param {k}: {:?} vs grad {:?}", p.shape(), gr.shape())));
        }
        if let Some(i) = gr.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: k,
                row: i / gr.cols(),
                col: i % gr.cols(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for ((p, gr), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let p = p.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for (i, &gi) in gr.as_slice().iter().enumerate() {
            p[i] *= 1.0 - lr * hyper.weight_decay;
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Which parameters a run returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Parameters from the epoch with the highest validation AUC.
    BestValAuc,
    FinalEpoch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub selection: Selection,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 170,
            lr: 0.005,
            adamw: AdamWConfig::default(),
            seed: 0,
            selection: Selection::BestValAuc,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 || a.weight_decay < 0.0 {
            return Err(Error::invalid(format!("invalid AdamW settings {a:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_f1_macro: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
}

impl RunHistory {
    pub const HEADER: &'static str = "epoch,lr,train_loss,val_auc,val_f1_macro";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.6},{:.6}\n",
                r.epoch, r.lr, r.train_loss, r.val_auc, r.val_f1_macro
            ));
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

/// A finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: RunHistory,
    /// Metrics of the returned model on the validation nodes.
    pub validation: MetricRecord,
}

/// Trains `variant` on `graph` and returns the selected model.
pub fn train(
    graph: &TransactionGraph,
    split: &SplitAssignment,
    variant: ModelVariant,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let ctx = GraphContext::new(graph, model_config.temporal.d_pos)?;
    train_on_context(graph, &ctx, split, variant, model_config, config)
}

/// As [`train`], reusing a prepared context.
pub fn train_on_context(
    graph: &TransactionGraph,
    ctx: &GraphContext,
    split: &SplitAssignment,
    variant: ModelVariant,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train_idx.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let y_train = graph.targets(&split.train_idx)?;
    let y_val = graph.targets(&split.val_idx)?;
    let val_pos = y_val.iter().filter(|&&y| y == 1.0).count();
    if val_pos == 0 || val_pos == y_val.len() {
        return Err(Error::invalid("validation split needs both classes for AUC model selection"));
    }
    let w_pos = match variant.loss {
        LossMode::Weighted => class_weight(&y_train)?,
        LossMode::Plain => 1.0,
    };

    let mut model = Model::new(variant, *model_config, graph.feature_dim(), config.seed)?;
    let mut state = OptimizerState::new(model.params.values());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let train_idx: Arc<[usize]> = split.train_idx.clone().into();

    let mut history = RunHistory::default();
    let mut best: Option<(f64, Vec<Matrix>)> = None;
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr)?;
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let probs = model.forward(&mut g, &b, ctx, Mode::Train, &mut rng)?;
        let picked = g.gather_rows(probs, &train_idx)?;
        let loss = weighted_bce(&mut g, picked, &y_train, w_pos)?;
        let train_loss = g.value(loss).item();
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("training loss is {train_loss}"),
            });
        }
        g.backward(loss)?;
        let grads = b.grads(&g);
        adamw_step(model.params.values_mut(), &grads, &mut state, lr, &config.adamw).map_err(|e| match e {
            Error::NonFiniteGradient { param, row, col } => Error::Diverged {
                epoch,
                msg: format!(
                    "non-finite gradient in {} at ({row}, {col})",
                    model.params.names()[param]
                ),
            },
            other => other,
        })?;

        let scores = model.predict(ctx)?;
        let val_scores: Vec<f64> = split.val_idx.iter().map(|&i| scores[i]).collect();
        let val_auc = roc_auc(&val_scores, &y_val)?;
        let val_f1 = threshold_metrics(&val_scores, &y_val, config.threshold)?.f1_macro;
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_auc,
            val_f1_macro: val_f1,
        });
        if config.selection == Selection::BestValAuc && best.as_ref().is_none_or(|(a, _)| val_auc > *a) {
            best = Some((val_auc, model.params.values().to_vec()));
            history.selected_epoch = epoch;
        }
    }
    match best {
        Some((_, values)) => model.params.values_mut().clone_from_slice(&values),
        None => history.selected_epoch = config.epochs - 1,
    }
    let scores = model.predict(ctx)?;
    let val_scores: Vec<f64> = split.val_idx.iter().map(|&i| scores[i]).collect();
    let validation = MetricRecord::evaluate(&val_scores, &y_val, config.threshold)?;
    Ok(TrainOutcome {
        model,
        history,
        validation,
    })
}

/// Metrics of `model` on the nodes in `idx`.
pub fn evaluate(model: &Model, ctx: &GraphContext, graph: &TransactionGraph, idx: &[usize], threshold: f64) -> Result<MetricRecord> {
    let y = graph.targets(idx)?;
    let scores = model.predict(ctx)?;
    let picked: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    MetricRecord::evaluate(&picked, &y, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::Label;
    use crate::model::Architecture;

    #[test]
    fn class_weight_examples() {
        let mut y = vec![0.0; 42019];
        y.extend(vec![1.0; 4545]);
        assert!((class_weight(&y).unwrap() - 9.2451).abs() < 1e-4);
        assert!(class_weight(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0, 170, 0.005).unwrap(), 0.005);
        assert!((cosine_lr(85, 170, 0.005).unwrap() - 0.0025).abs() < 1e-15);
        assert!(cosine_lr(170, 170, 0.005).unwrap().abs() < 1e-15);
        assert!(cosine_lr(171, 170, 0.005).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..=170 {
            let lr = cosine_lr(e, 170, 0.005).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adamw_first_step_closed_form() {
        let mut p = vec![Matrix::from_rows(&[[0.5, -0.25, 1.0]]).unwrap()];
        let g = vec![Matrix::from_rows(&[[0.3, -2.0, 1e-3]]).unwrap()];
        let hyper = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(&p);
        let before = p[0].clone();
        adamw_step(&mut p, &g, &mut st, 0.01, &hyper).unwrap();
        for i in 0..3 {
            let delta = p[0].as_slice()[i] - before.as_slice()[i];
            let gi = g[0].as_slice()[i];
            // m_hat = g and v_hat = g^2 after one step
            let expect = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((delta - expect).abs() < 1e-9, "{delta} vs {expect}");
            if gi.abs() > 0.1 {
                assert!((delta + 0.01 * gi.signum()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adamw_decay_only() {
        let mut p = vec![Matrix::from_rows(&[[2.0, -4.0]]).unwrap()];
        let g = vec![Matrix::zeros(1, 2)];
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, 0.1, &AdamWConfig::default()).unwrap();
        assert_eq!(p[0].as_slice(), &[2.0 * (1.0 - 0.1 * 0.01), -4.0 * (1.0 - 0.1 * 0.01)]);
    }

    #[test]
    fn adamw_rejects_nan() {
        let mut p = vec![Matrix::zeros(1, 2)];
        let g = vec![Matrix::from_rows(&[[0.0, f64::NAN]]).unwrap()];
        let mut st = OptimizerState::new(&p);
        let err = adamw_step(&mut p, &g, &mut st, 0.1, &AdamWConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { col: 1, .. }));
        assert_eq!(st.step, 0);
    }

    pub(crate) fn toy_graph() -> (TransactionGraph, SplitAssignment) {
        let n = 20;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut times = Vec::new();
        for i in 0..n {
            let fraud = i % 4 == 0;
            let s = if fraud { 1.0 } else { -1.0 };
            rows.push([s + 0.1 * (i as f64).sin(), 0.3 * (i as f64).cos(), s * 0.5]);
            labels.push(if fraud { Label::Illicit } else { Label::Licit });
            times.push(1 + (i / 4) as u32);
        }
        let mut edges = Vec::new();
        for i in 1..n {
            edges.push((i - 1, i));
            if i >= 3 {
                edges.push((i - 3, i));
            }
        }
        let graph = TransactionGraph::new(
            (0..n).map(|i| i.to_string()).collect(),
            Matrix::from_rows(&rows).unwrap(),
            times,
            labels,
            edges,
        )
        .unwrap();
        let split = SplitAssignment {
            train_idx: (0..n).collect(),
            val_idx: (0..n).collect(),
            held_idx: vec![],
            seed: 0,
        };
        (graph, split)
    }

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::default();
        c.hidden = 8;
        c.attention.heads = 2;
        c.attention.head_dim = 4;
        c.temporal.d_t = 8;
        c.temporal.d_pos = 4;
        c
    }

    #[test]
    fn loss_decreases_on_toy_graph() {
        let (graph, split) = toy_graph();
        let cfg = TrainConfig {
            epochs: 100,
            lr: 0.01,
            selection: Selection::FinalEpoch,
            ..TrainConfig::default()
        };
        for arch in [
            Architecture::LogReg,
            Architecture::Gcn,
            Architecture::BGat,
            Architecture::SGat,
            Architecture::TGat,
            Architecture::Atgat,
        ] {
            let variant = ModelVariant::new(arch, LossMode::Weighted);
            let out = train(&graph, &split, variant, &small_config(), &cfg).unwrap();
            let losses = out.history.losses();
            let (first, last) = (losses[0], *losses.last().unwrap());
            assert!(last < first, "{variant}: {first} -> {last}");
            if arch.is_gat() {
                assert!(last <= 0.5 * first, "{variant}: {first} -> {last}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (graph, split) = toy_graph();
        let cfg = TrainConfig {
            epochs: 15,
            seed: 3,
            ..TrainConfig::default()
        };
        let v: ModelVariant = "ATGAT-W".parse().unwrap();
        let a = train(&graph, &split, v, &small_config(), &cfg).unwrap();
        let b = train(&graph, &split, v, &small_config(), &cfg).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn history_csv_columns() {
        let (graph, split) = toy_graph();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&graph, &split, "LR".parse().unwrap(), &small_config(), &cfg).unwrap();
        let csv = out.history.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RunHistory::HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0.00500000,"));
    }
}
