//! Training loop, early stopping, multi-split experiments and embedding export.

mod spec;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, AutodiffError, Tape, Tensor};
use crate::graph::{load_dataset, make_splits, read_splits, DatasetPaths, Graph, GraphError, LabelSet, Split};
use crate::metrics::{aggregate_runs, argmax_rows, match_rate, MetricsError, Summary};
use crate::model::{cross_entropy, Model, ModelError};
use crate::walker::{RngStream, WalkError, WalkStrategy, WalkTable};

pub use spec::{parse_config, Channel, ExperimentSpec, KEYS, SEED_ENV};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("every split failed")]
    AllSplitsFailed,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Stops after `patience` consecutive epochs without a strict improvement
/// of validation accuracy.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_acc: f64) -> Observation {
        let improved = self.best.map_or(true, |(_, b)| val_acc > b);
        if improved {
            self.best = Some((epoch, val_acc));
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        Observation {
            improved,
            stop: self.wait >= self.patience,
        }
    }

    /// Epoch and value of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Hands out fresh walk streams in a fixed order.
struct WalkStreams {
    seed: u64,
    next: u64,
}

impl WalkStreams {
    fn new(seed: u64, first: u64) -> Self {
        WalkStreams { seed, next: first }
    }

    fn sample(&mut self, g: &Graph, strategies: &[WalkStrategy]) -> Result<Vec<WalkTable>, WalkError> {
        strategies
            .iter()
            .map(|ws| {
                self.next += 1;
                WalkTable::sample(g, ws, self.seed, self.next - 1)
            })
            .collect()
    }
}

const DROPOUT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_WALKS: u64 = 1;
const TEST_WALKS: u64 = 1 << 31;

/// Mean class probabilities over `samples` neighborhood draws, dropout off.
fn evaluate(
    model: &Model,
    g: &Graph,
    strategies: &[WalkStrategy],
    streams: &mut WalkStreams,
    samples: usize,
) -> Result<Tensor, TrainError> {
    let mut acc: Option<Tensor> = None;
    for _ in 0..samples {
        let probs = model.predict(g, &streams.sample(g, strategies)?)?;
        match acc.as_mut() {
            None => acc = Some(probs),
            Some(a) => a.data_mut().iter_mut().zip(probs.data()).for_each(|(x, y)| *x += y),
        }
    }
    let mut out = acc.ok_or_else(|| TrainError::Config("eval_samples must be at least 1".into()))?;
    out.data_mut().iter_mut().for_each(|x| *x /= samples as f64);
    Ok(out)
}

fn diverged(epoch: usize) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Autodiff(AutodiffError::NonFinite(op)) => TrainError::Diverged {
            epoch,
            detail: format!("non-finite value from {op}"),
        },
        other => other.into(),
    }
}

fn pick(preds: &[usize], nodes: &[usize]) -> Vec<usize> {
    nodes.iter().map(|&i| preds[i]).collect()
}

/// Result of training on one split.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub history: Vec<EpochRecord>,
    pub wall_clock: Duration,
}

/// Trains a fresh model on `split`, resampling every neighborhood each epoch.
///
/// Test labels stay sealed until the best checkpoint is evaluated.
pub fn train_one_split(
    spec: &ExperimentSpec,
    g: &Graph,
    labels: &LabelSet,
    split: &Split,
    seed: u64,
) -> Result<SplitOutcome, TrainError> {
    let start = Instant::now();
    let strategies = spec.walk_strategies()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(TrainError::Config("split has an empty part".into()));
    }
    let sealed = labels.seal(&split.test);
    let train_y = sealed.labels_for(&split.train)?;
    let val_y = sealed.labels_for(&split.val)?;
    let train_mask: Vec<u32> = split.train.iter().map(|&i| i as u32).collect();

    let config = spec.model_config(g.feature_dim(), labels.num_classes());
    let mut model = Model::new(config, &mut RngStream::new(seed, INIT_STREAM).rng())?;
    let mut adam = AdamState::new(AdamConfig {
        lr: spec.lr,
        weight_decay: spec.weight_decay,
        ..AdamConfig::default()
    });
    let mut dropout_rng = RngStream::new(seed, DROPOUT_STREAM).rng();
    let mut streams = WalkStreams::new(seed, TRAIN_WALKS);
    let mut stopper = EarlyStopper::new(spec.patience);
    let mut best = model.clone();
    let mut history = Vec::new();

    for epoch in 1..=spec.max_epochs {
        let hoods = streams.sample(g, &strategies)?;
        let tape = Tape::new();
        let out = model
            .forward(&tape, g, &hoods, true, &mut dropout_rng)
            .map_err(diverged(epoch))?;
        let loss = cross_entropy(out.probs, &train_mask, &train_y).map_err(diverged(epoch))?;
        let train_loss = loss.item()?;
        let grads = tape.backward(loss)?;
        model.params.absorb(&grads);
        adam_step(&mut model.params, &mut adam)?;
        if let Some((name, _)) = model.params.iter().find(|(_, p)| !p.value.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                detail: format!("parameter {name} became non-finite"),
            });
        }

        let probs = evaluate(&model, g, &strategies, &mut streams, spec.eval_samples)?;
        let preds = argmax_rows(&probs);
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc: match_rate(&pick(&preds, &split.train), &train_y)?,
            val_acc: match_rate(&pick(&preds, &split.val), &val_y)?,
        };
        let seen = stopper.observe(epoch, record.val_acc);
        history.push(record);
        if seen.improved {
            best = model.clone();
        }
        if seen.stop {
            break;
        }
    }

    let (best_epoch, best_val_acc) = stopper.best().expect("at least one epoch");
    debug_assert_eq!(sealed.violations(), 0);
    let labels = sealed.unseal();
    let test_y: Vec<usize> = split
        .test
        .iter()
        .map(|&i| labels.get(i).ok_or(MetricsError::Unlabeled(i)))
        .collect::<Result<_, _>>()?;
    let mut test_streams = WalkStreams::new(seed, TEST_WALKS);
    let probs = evaluate(&best, g, &strategies, &mut test_streams, spec.eval_samples)?;
    let test_acc = match_rate(&pick(&argmax_rows(&probs), &split.test), &test_y)?;

    Ok(SplitOutcome {
        model: best,
        best_epoch,
        best_val_acc,
        test_acc,
        history,
        wall_clock: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub seed: u64,
    pub test_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub error: Option<String>,
    /// Not serialized, so result files from identical runs match byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub spec: ExperimentSpec,
    pub splits: Vec<SplitRecord>,
    /// Mean and population std of test accuracy over completed splits.
    pub summary: Option<Summary>,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn completed(&self) -> Vec<f64> {
        self.splits.iter().filter_map(|s| s.test_acc).collect()
    }

    /// Per-split table with accuracies in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset {} (K={})", self.dataset, self.spec.path_length);
        let _ = writeln!(out, "{:>5} {:>6} {:>6} {:>8} {:>8} {:>9}", "split", "seed", "epoch", "val %", "test %", "time s");
        for s in &self.splits {
            match (&s.error, s.test_acc) {
                (None, Some(t)) => {
                    let _ = writeln!(
                        out,
                        "{:>5} {:>6} {:>6} {:>8.2} {:>8.2} {:>9.1}",
                        s.index,
                        s.seed,
                        s.best_epoch.unwrap_or(0),
                        100.0 * s.best_val_acc.unwrap_or(0.0),
                        100.0 * t,
                        s.wall_clock_secs
                    );
                }
                (err, _) => {
                    let _ = writeln!(out, "{:>5} {:>6} failed: {}", s.index, s.seed, err.as_deref().unwrap_or("?"));
                }
            }
        }
        match &self.summary {
            Some(sum) => {
                let pct = Summary {
                    mean: 100.0 * sum.mean,
                    std: 100.0 * sum.std,
                };
                let _ = writeln!(
                    out,
                    "test accuracy {pct} over {} of {} splits (population std)",
                    self.completed().len(),
                    self.splits.len()
                );
            }
            None => {
                let _ = writeln!(out, "no split completed");
            }
        }
        out
    }
}

/// Loads the dataset named by `spec` and runs every split.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunResult, TrainError> {
    let (g, labels) = load_dataset(&DatasetPaths::in_dir(&spec.dataset))?;
    run_experiment_on(spec, &g, &labels)
}

/// Trains on `n_splits` splits in parallel, split `k` using seed `seed + k`.
/// A failed split is recorded and left out of the summary.
pub fn run_experiment_on(spec: &ExperimentSpec, g: &Graph, labels: &LabelSet) -> Result<RunResult, TrainError> {
    spec.validate()?;
    let splits = match &spec.splits_file {
        Some(path) => {
            let set = read_splits(path)?;
            set.validate(labels)?;
            if set.splits.len() < spec.n_splits {
                return Err(TrainError::Config(format!(
                    "{} holds {} splits, {} requested",
                    path.display(),
                    set.splits.len(),
                    spec.n_splits
                )));
            }
            set
        }
        None => make_splits(labels, (spec.train_ratio, spec.val_ratio), spec.n_splits, spec.seed)?,
    };

    let records: Vec<SplitRecord> = splits.splits[..spec.n_splits]
        .par_iter()
        .enumerate()
        .map(|(k, split)| {
            let seed = spec.seed.wrapping_add(k as u64);
            match train_one_split(spec, g, labels, split, seed) {
                Ok(o) => SplitRecord {
                    index: k,
                    seed,
                    test_acc: Some(o.test_acc),
                    best_epoch: Some(o.best_epoch),
                    best_val_acc: Some(o.best_val_acc),
                    history: o.history,
                    error: None,
                    wall_clock_secs: o.wall_clock.as_secs_f64(),
                },
                Err(e) => SplitRecord {
                    index: k,
                    seed,
                    test_acc: None,
                    best_epoch: None,
                    best_val_acc: None,
                    history: Vec::new(),
                    error: Some(e.to_string()),
                    wall_clock_secs: 0.0,
                },
            }
        })
        .collect();

    let accs: Vec<f64> = records.iter().filter_map(|r| r.test_acc).collect();
    if accs.len() < records.len() {
        log::warn!(
            "{} of {} splits failed; summary covers the rest",
            records.len() - accs.len(),
            records.len()
        );
    }
    let summary = if accs.is_empty() { None } else { Some(aggregate_runs(&accs)?) };
    Ok(RunResult {
        dataset: dataset_name(spec),
        spec: spec.clone(),
        splits: records,
        summary,
    })
}

/// The configured name, else the dataset directory's final component.
pub fn dataset_name(spec: &ExperimentSpec) -> String {
    if !spec.name.is_empty() {
        return spec.name.clone();
    }
    spec.dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Writes a trained model together with the walk strategies it was trained with.
pub fn save_checkpoint(path: &Path, model: &Model, strategies: &[WalkStrategy]) -> Result<(), TrainError> {
    let walks = serde_json::to_string(strategies)?;
    let mut w = BufWriter::new(File::create(path)?);
    model.save(&mut w, &[("walks".to_string(), walks)])?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Vec<WalkStrategy>), TrainError> {
    let (model, meta) = Model::load(BufReader::new(File::open(path)?))?;
    let walks = meta
        .iter()
        .find(|(k, _)| k == "walks")
        .ok_or_else(|| TrainError::Config(format!("{} records no walk strategies", path.display())))?;
    let strategies: Vec<WalkStrategy> = serde_json::from_str(&walks.1)?;
    Ok((model, strategies))
}

/// Writes one line per node, `node v1 ... v_d`, after a header naming the
/// embedding width and strategy order. Neighborhoods come from `seed`, so
/// equal inputs give identical files.
pub fn export_embeddings<W: Write>(
    model: &Model,
    strategies: &[WalkStrategy],
    g: &Graph,
    seed: u64,
    mut w: W,
) -> Result<(), TrainError> {
    if g.feature_dim() != model.config.input_dim {
        return Err(TrainError::Config(format!(
            "checkpoint expects {} features, graph has {}",
            model.config.input_dim,
            g.feature_dim()
        )));
    }
    let hoods = WalkStreams::new(seed, 0).sample(g, strategies)?;
    let emb = model.embed(g, &hoods)?;
    let d = model.config.d_final();
    writeln!(
        w,
        "# nodes={} d_final={} strategies={}",
        g.n(),
        d,
        model.config.strategies.join(",")
    )?;
    for i in 0..g.n() {
        let mut line = i.to_string();
        for v in emb.row(i) {
            let _ = write!(line, " {v}");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
