//! Flat `key = value` run configuration and the commands behind the `atgat`
//! binary.
//!
//! Every command writes into one output directory with fixed file names:
//! [`CONFIG_ECHO`], [`CHECKPOINT_FILE`], [`HISTORY_FILE`], [`METRICS_FILE`],
//! [`REPORT_FILE`], plus the three dataset files for `synth`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::{gradcheck_suite, suite_max_error, SuiteEntry, GRADCHECK_TOL};
use crate::error::{Error, Result};
use crate::graph_data::{dataset_paths, load_graph, split_nodes, write_graph, LoadOptions, SplitAssignment, TransactionGraph};
use crate::metrics::{ablation_run, AblationReport, MetricRecord, SplitMode};
use crate::model::{read_checkpoint, write_checkpoint, GraphContext, Model, ModelConfig, ModelVariant};
use crate::synth::{generate_synthetic, SynthConfig};
use crate::training::{evaluate, train_on_context, RunHistory, Selection, TrainConfig};

pub const CONFIG_ECHO: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files {
        features: PathBuf,
        classes: PathBuf,
        edges: PathBuf,
    },
    Synth(SynthConfig),
}

/// Which labeled nodes `eval` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    Held,
}

impl EvalSplit {
    fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Held => "held",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppConfig {
    pub data: DataSource,
    pub load: LoadOptions,
    /// Drop unlabeled nodes (and their edges) before training.
    pub labeled_only: bool,
    /// Z-score features with statistics of the training nodes.
    pub standardize: bool,
    pub variant: ModelVariant,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub split_stratified: bool,
    pub eval_split: EvalSplit,
    pub ablate_variants: Vec<ModelVariant>,
    pub ablate_seeds: usize,
    pub ablate_seed_base: u64,
    pub output_dir: PathBuf,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthConfig::default()),
            load: LoadOptions::default(),
            labeled_only: true,
            standardize: false,
            variant: "ATGAT-W".parse().expect("variant name"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_ratios: (0.8, 0.1, 0.1),
            split_seed: 0,
            split_stratified: false,
            eval_split: EvalSplit::Val,
            ablate_variants: ["B-GAT", "S-GAT", "T-GAT", "ATGAT", "ATGAT-W"]
                .iter()
                .map(|s| s.parse().expect("variant name"))
                .collect(),
            ablate_seeds: 10,
            ablate_seed_base: 0,
            output_dir: PathBuf::from("atgat-out"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.into(),
        msg: format!("cannot parse `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            msg: format!("expected true or false, got `{value}`"),
        }),
    }
}

fn parse_char(key: &str, value: &str) -> Result<char> {
    let value = if value == "\\t" || value == "tab" { "\t" } else { value };
    let mut chars = value.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(Error::Config {
            key: key.into(),
            msg: format!("expected a single character, got `{value}`"),
        }),
    }
}

/// `all`, or comma-separated indices and inclusive ranges such as `0-93,100`.
fn parse_columns(key: &str, value: &str) -> Result<Option<Vec<usize>>> {
    if value == "all" {
        return Ok(None);
    }
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (parse_value(key, a.trim())?, parse_value(key, b.trim())?);
                if a > b {
                    return Err(Error::Config {
                        key: key.into(),
                        msg: format!("empty range `{part}`"),
                    });
                }
                out.extend(a..=b);
            }
            None => out.push(parse_value(key, part)?),
        }
    }
    Ok(Some(out))
}

fn format_columns(cols: &Option<Vec<usize>>) -> String {
    let Some(cols) = cols else { return "all".into() };
    let mut parts = Vec::new();
    let mut i = 0;
    while i < cols.len() {
        let mut j = i;
        while j + 1 < cols.len() && cols[j + 1] == cols[j] + 1 {
            j += 1;
        }
        parts.push(if j > i {
            format!("{}-{}", cols[i], cols[j])
        } else {
            cols[i].to_string()
        });
        i = j + 1;
    }
    parts.join(",")
}

fn parse_variants(key: &str, value: &str) -> Result<Vec<ModelVariant>> {
    let out: Vec<ModelVariant> = value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| Error::Config {
                key: key.into(),
                msg: format!("unknown variant `{}`", s.trim()),
            })
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config {
            key: key.into(),
            msg: "no variants".into(),
        });
    }
    Ok(out)
}

/// Reads `key = value` lines. `#` starts a comment; repeated keys are errors.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config {
                key: k.into(),
                msg: format!("set twice in {}", origin.display()),
            });
        }
    }
    Ok(out)
}

impl AppConfig {
    /// Builds a config from defaults plus `pairs`.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = AppConfig::default();
        let mut synth = SynthConfig::default();
        let mut first_synth_key: Option<&str> = None;
        let (mut dir, mut features, mut classes, mut edges) = (None, None, None, None);
        let (mut r_train, mut r_val, mut r_held) = cfg.split_ratios;
        for (k, v) in pairs {
            let key = k.as_str();
            let v = v.as_str();
            if key.starts_with("synth.") {
                first_synth_key.get_or_insert(key);
            }
            match key {
                "data.dir" => dir = Some(PathBuf::from(v)),
                "data.features" => features = Some(PathBuf::from(v)),
                "data.classes" => classes = Some(PathBuf::from(v)),
                "data.edges" => edges = Some(PathBuf::from(v)),
                "data.delimiter" => cfg.load.delimiter = parse_char(key, v)?,
                "data.illicit_token" => cfg.load.illicit_token = v.into(),
                "data.licit_token" => cfg.load.licit_token = v.into(),
                "data.feature_columns" => cfg.load.feature_columns = parse_columns(key, v)?,
                "data.labeled_only" => cfg.labeled_only = parse_bool(key, v)?,
                "data.standardize" => cfg.standardize = parse_bool(key, v)?,

                "synth.n_nodes" => synth.n_nodes = parse_value(key, v)?,
                "synth.n_time_steps" => synth.n_time_steps = parse_value(key, v)?,
                "synth.fraud_ratio" => synth.fraud_ratio = parse_value(key, v)?,
                "synth.feature_dim" => synth.feature_dim = parse_value(key, v)?,
                "synth.attach_degree" => synth.attach_degree = parse_value(key, v)?,
                "synth.fraud_burst_delta" => synth.fraud_burst_delta = parse_value(key, v)?,
                "synth.feature_shift" => synth.feature_shift = parse_value(key, v)?,
                "synth.shifted_features" => synth.shifted_features = parse_value(key, v)?,
                "synth.seed" => synth.seed = parse_value(key, v)?,

                "model.variant" => {
                    cfg.variant = v.parse().map_err(|_| Error::Config {
                        key: key.into(),
                        msg: format!("unknown variant `{v}`"),
                    })?
                }
                "model.hidden" => cfg.model.hidden = parse_value(key, v)?,
                "model.layers" => cfg.model.layers = parse_value(key, v)?,
                "model.heads" => cfg.model.attention.heads = parse_value(key, v)?,
                "model.head_dim" => cfg.model.attention.head_dim = parse_value(key, v)?,
                "model.leaky_slope" => cfg.model.attention.leaky_slope = parse_value(key, v)?,
                "model.attention_dropout" => cfg.model.attention.dropout = parse_value(key, v)?,
                "model.fusion_hidden" => cfg.model.attention.fusion_hidden = parse_value(key, v)?,
                "model.d_t" => cfg.model.temporal.d_t = parse_value(key, v)?,
                "model.d_pos" => cfg.model.temporal.d_pos = parse_value(key, v)?,
                "model.temporal_dropout" => cfg.model.temporal.dropout = parse_value(key, v)?,
                "model.recompute_temporal" => cfg.model.recompute_temporal = parse_bool(key, v)?,

                "train.epochs" => cfg.train.epochs = parse_value(key, v)?,
                "train.lr" => cfg.train.lr = parse_value(key, v)?,
                "train.beta1" => cfg.train.adamw.beta1 = parse_value(key, v)?,
                "train.beta2" => cfg.train.adamw.beta2 = parse_value(key, v)?,
                "train.eps" => cfg.train.adamw.eps = parse_value(key, v)?,
                "train.weight_decay" => cfg.train.adamw.weight_decay = parse_value(key, v)?,
                "train.seed" => cfg.train.seed = parse_value(key, v)?,
                "train.threshold" => cfg.train.threshold = parse_value(key, v)?,
                "train.selection" => {
                    cfg.train.selection = match v {
                        "best_val_auc" => Selection::BestValAuc,
                        "final" => Selection::FinalEpoch,
                        _ => {
                            return Err(Error::Config {
                                key: key.into(),
                                msg: format!("expected best_val_auc or final, got `{v}`"),
                            })
                        }
                    }
                }

                "split.train" => r_train = parse_value(key, v)?,
                "split.val" => r_val = parse_value(key, v)?,
                "split.held" => r_held = parse_value(key, v)?,
                "split.seed" => cfg.split_seed = parse_value(key, v)?,
                "split.stratified" => cfg.split_stratified = parse_bool(key, v)?,

                "eval.split" => {
                    cfg.eval_split = match v {
                        "train" => EvalSplit::Train,
                        "val" => EvalSplit::Val,
                        "held" => EvalSplit::Held,
                        _ => {
                            return Err(Error::Config {
                                key: key.into(),
                                msg: format!("expected train, val or held, got `{v}`"),
                            })
                        }
                    }
                }
                "ablate.variants" => cfg.ablate_variants = parse_variants(key, v)?,
                "ablate.seeds" => cfg.ablate_seeds = parse_value(key, v)?,
                "ablate.seed_base" => cfg.ablate_seed_base = parse_value(key, v)?,
                "output.dir" => cfg.output_dir = PathBuf::from(v),
                _ => {
                    return Err(Error::Config {
                        key: key.into(),
                        msg: "unknown key".into(),
                    })
                }
            }
        }
        cfg.split_ratios = (r_train, r_val, r_held);

        let any_files = dir.is_some() || features.is_some() || classes.is_some() || edges.is_some();
        if any_files {
            if let Some(k) = first_synth_key {
                return Err(Error::Config {
                    key: k.into(),
                    msg: "data files and synth settings are mutually exclusive".into(),
                });
            }
            let defaults = dir.as_ref().map(dataset_paths);
            let pick = |explicit: Option<PathBuf>, default: Option<PathBuf>, key: &str| {
                explicit.or(default).ok_or_else(|| Error::Config {
                    key: key.into(),
                    msg: "missing; set data.dir or all of data.features, data.classes, data.edges".into(),
                })
            };
            cfg.data = DataSource::Files {
                features: pick(features, defaults.as_ref().map(|d| d.0.clone()), "data.features")?,
                classes: pick(classes, defaults.as_ref().map(|d| d.1.clone()), "data.classes")?,
                edges: pick(edges, defaults.as_ref().map(|d| d.2.clone()), "data.edges")?,
            };
        } else {
            cfg.data = DataSource::Synth(synth);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text, origin)?)
    }

    /// Reads `path`, then applies `overrides` (`key=value`) on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => parse_pairs(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p)?,
            None => BTreeMap::new(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.clone(),
                msg: "override must look like key=value".into(),
            })?;
            pairs.insert(k.trim().into(), v.trim().into());
        }
        Self::from_pairs(&pairs)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, e: Error| Error::Config {
            key: key.into(),
            msg: e.to_string(),
        };
        self.model.validate().map_err(|e| wrap("model", e))?;
        self.train.validate().map_err(|e| wrap("train", e))?;
        crate::graph_data::split_sizes(100, self.split_ratios).map_err(|e| wrap("split", e))?;
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        if self.ablate_seeds < 2 {
            return Err(Error::Config {
                key: "ablate.seeds".into(),
                msg: "need at least 2 seeds".into(),
            });
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = Vec::new();
        match &self.data {
            DataSource::Files { features, classes, edges } => {
                e.push(("data.features", features.display().to_string()));
                e.push(("data.classes", classes.display().to_string()));
                e.push(("data.edges", edges.display().to_string()));
            }
            DataSource::Synth(s) => {
                e.push(("synth.n_nodes", s.n_nodes.to_string()));
                e.push(("synth.n_time_steps", s.n_time_steps.to_string()));
                e.push(("synth.fraud_ratio", s.fraud_ratio.to_string()));
                e.push(("synth.feature_dim", s.feature_dim.to_string()));
                e.push(("synth.attach_degree", s.attach_degree.to_string()));
                e.push(("synth.fraud_burst_delta", s.fraud_burst_delta.to_string()));
                e.push(("synth.feature_shift", s.feature_shift.to_string()));
                e.push(("synth.shifted_features", s.shifted_features.to_string()));
                e.push(("synth.seed", s.seed.to_string()));
            }
        }
        let delim = match self.load.delimiter {
            '\t' => "tab".to_string(),
            c => c.to_string(),
        };
        e.push(("data.delimiter", delim));
        e.push(("data.illicit_token", self.load.illicit_token.clone()));
        e.push(("data.licit_token", self.load.licit_token.clone()));
        e.push(("data.feature_columns", format_columns(&self.load.feature_columns)));
        e.push(("data.labeled_only", self.labeled_only.to_string()));
        e.push(("data.standardize", self.standardize.to_string()));
        let m = &self.model;
        e.push(("model.variant", self.variant.to_string()));
        e.push(("model.hidden", m.hidden.to_string()));
        e.push(("model.layers", m.layers.to_string()));
        e.push(("model.heads", m.attention.heads.to_string()));
        e.push(("model.head_dim", m.attention.head_dim.to_string()));
        e.push(("model.leaky_slope", m.attention.leaky_slope.to_string()));
        e.push(("model.attention_dropout", m.attention.dropout.to_string()));
        e.push(("model.fusion_hidden", m.attention.fusion_hidden.to_string()));
        e.push(("model.d_t", m.temporal.d_t.to_string()));
        e.push(("model.d_pos", m.temporal.d_pos.to_string()));
        e.push(("model.temporal_dropout", m.temporal.dropout.to_string()));
        e.push(("model.recompute_temporal", m.recompute_temporal.to_string()));
        let t = &self.train;
        e.push(("train.epochs", t.epochs.to_string()));
        e.push(("train.lr", t.lr.to_string()));
        e.push(("train.beta1", t.adamw.beta1.to_string()));
        e.push(("train.beta2", t.adamw.beta2.to_string()));
        e.push(("train.eps", t.adamw.eps.to_string()));
        e.push(("train.weight_decay", t.adamw.weight_decay.to_string()));
        e.push(("train.seed", t.seed.to_string()));
        e.push(("train.threshold", t.threshold.to_string()));
        let sel = match t.selection {
            Selection::BestValAuc => "best_val_auc",
            Selection::FinalEpoch => "final",
        };
        e.push(("train.selection", sel.into()));
        e.push(("split.train", self.split_ratios.0.to_string()));
        e.push(("split.val", self.split_ratios.1.to_string()));
        e.push(("split.held", self.split_ratios.2.to_string()));
        e.push(("split.seed", self.split_seed.to_string()));
        e.push(("split.stratified", self.split_stratified.to_string()));
        e.push(("eval.split", self.eval_split.name().into()));
        let variants: Vec<String> = self.ablate_variants.iter().map(|v| v.to_string()).collect();
        e.push(("ablate.variants", variants.join(",")));
        e.push(("ablate.seeds", self.ablate_seeds.to_string()));
        e.push(("ablate.seed_base", self.ablate_seed_base.to_string()));
        e.push(("output.dir", self.output_dir.display().to_string()));
        e
    }

    /// The config as parseable text, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Loaded data with its split, ready for training.
pub struct Prepared {
    pub graph: TransactionGraph,
    pub split: SplitAssignment,
}

/// Loads or generates the graph and splits it; features are standardized
/// with training-node statistics when configured.
pub fn prepare(cfg: &AppConfig) -> Result<Prepared> {
    let mut graph = match &cfg.data {
        DataSource::Files { features, classes, edges } => load_graph(features, classes, edges, &cfg.load)?,
        DataSource::Synth(s) => generate_synthetic(s)?,
    };
    if cfg.labeled_only {
        graph = graph.induced_labeled_subgraph();
    }
    let split = split_nodes(&graph, cfg.split_ratios, cfg.split_seed, cfg.split_stratified)?;
    if cfg.standardize {
        graph = graph.standardized(&split.train_idx)?;
    }
    Ok(Prepared { graph, split })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn echo_config(cfg: &AppConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(CONFIG_ECHO), &cfg.to_text())
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub model: Model,
    pub history: RunHistory,
    pub validation: MetricRecord,
}

/// Trains the configured variant; writes the config echo, checkpoint and history.
pub fn cmd_train(cfg: &AppConfig) -> Result<TrainSummary> {
    echo_config(cfg)?;
    let p = prepare(cfg)?;
    let ctx = GraphContext::new(&p.graph, cfg.model.temporal.d_pos)?;
    let out = train_on_context(&p.graph, &ctx, &p.split, cfg.variant, &cfg.model, &cfg.train)?;
    write_checkpoint(&out.model, cfg.output_dir.join(CHECKPOINT_FILE))?;
    write_file(&cfg.output_dir.join(HISTORY_FILE), &out.history.to_csv())?;
    Ok(TrainSummary {
        model: out.model,
        history: out.history,
        validation: out.validation,
    })
}

/// Scores a checkpoint (default: the one in the output directory) on the
/// configured split and writes the metrics table.
pub fn cmd_eval(cfg: &AppConfig, checkpoint: Option<&Path>) -> Result<MetricRecord> {
    echo_config(cfg)?;
    let default_path = cfg.output_dir.join(CHECKPOINT_FILE);
    let model = read_checkpoint(checkpoint.unwrap_or(&default_path))?;
    let p = prepare(cfg)?;
    let ctx = GraphContext::new(&p.graph, model.config.temporal.d_pos)?;
    let idx = match cfg.eval_split {
        EvalSplit::Train => &p.split.train_idx,
        EvalSplit::Val => &p.split.val_idx,
        EvalSplit::Held => &p.split.held_idx,
    };
    let metrics = evaluate(&model, &ctx, &p.graph, idx, cfg.train.threshold)?;
    write_file(&cfg.output_dir.join(METRICS_FILE), &metrics.to_table())?;
    Ok(metrics)
}

/// Repeated-seed ablation over the configured variants on one fixed split.
pub fn cmd_ablate(cfg: &AppConfig) -> Result<AblationReport> {
    echo_config(cfg)?;
    let p = prepare(cfg)?;
    let seeds: Vec<u64> = (0..cfg.ablate_seeds as u64).map(|k| cfg.ablate_seed_base + k).collect();
    let report = ablation_run(
        &p.graph,
        &SplitMode::Fixed(p.split),
        &seeds,
        &cfg.ablate_variants,
        &cfg.model,
        &cfg.train,
    )?;
    write_file(&cfg.output_dir.join(REPORT_FILE), &report.to_table())?;
    Ok(report)
}

/// Writes the synthetic dataset into the output directory.
pub fn cmd_synth(cfg: &AppConfig) -> Result<TransactionGraph> {
    let DataSource::Synth(s) = &cfg.data else {
        return Err(Error::Config {
            key: "data".into(),
            msg: "synth needs synth.* settings, not data files".into(),
        });
    };
    echo_config(cfg)?;
    let graph = generate_synthetic(s)?;
    let (f, c, e) = dataset_paths(&cfg.output_dir);
    write_graph(&graph, f, c, e, &cfg.load)?;
    Ok(graph)
}

/// Runs the gradient-check suite; returns the entries and whether every
/// entry is within tolerance.
pub fn cmd_gradcheck() -> Result<(Vec<SuiteEntry>, bool)> {
    let entries = gradcheck_suite()?;
    let ok = suite_max_error(&entries) < GRADCHECK_TOL;
    Ok((entries, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<AppConfig> {
        AppConfig::parse(text, Path::new("test.cfg"))
    }

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = AppConfig::default();
        let back = parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let text = "data.dir = /tmp/x\ndata.delimiter = tab\ndata.feature_columns = 0-3,7\nmodel.variant = gcn-w\n";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.load.feature_columns, Some(vec![0, 1, 2, 3, 7]));
        assert_eq!(parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn named_key_errors() {
        let err = parse("model.hiden = 3").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "model.hiden"), "{err}");
        let err = parse("train.lr = fast").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "train.lr"));
        let err = parse("train.lr = 0.1\ntrain.lr = 0.2").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "train.lr"));
        assert!(matches!(parse("no equals sign"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn files_xor_synth() {
        let err = parse("data.dir = d\nsynth.n_nodes = 100").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "synth.n_nodes"));
        let err = parse("data.features = f.csv").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "data.classes"));
        let cfg = parse("data.dir = d\ndata.edges = e.csv").unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Files {
                features: PathBuf::from("d/txs_features.csv"),
                classes: PathBuf::from("d/txs_classes.csv"),
                edges: PathBuf::from("e.csv"),
            }
        );
        assert!(matches!(parse("").unwrap().data, DataSource::Synth(_)));
    }

    #[test]
    fn overrides_replace_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "train.epochs = 5 # short\n").unwrap();
        let cfg = AppConfig::load(Some(&path), &["train.epochs=7".into(), "split.seed = 3".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.split_seed, 3);
        let err = AppConfig::load(Some(&dir.path().join("missing.cfg")), &[]).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn synth_rejects_file_source() {
        let cfg = parse("data.dir = d").unwrap();
        assert!(matches!(cmd_synth(&cfg), Err(Error::Config { .. })));
    }
}
