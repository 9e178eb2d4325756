//! Full-batch training with early stopping, evaluation, and the grid / q
//! sweep drivers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamStore, Tape};
use crate::data::{direction_accuracy_from_three_class, LinkInstance, LinkSplit, NodeSplit};
use crate::dense::ComplexFeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::model::{build_model, LinkScheme, MagNet, MagNetConfig, Task};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 3000,
            patience: 500,
            lr: 5e-3,
            weight_decay: 5e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(
                "lr and weight_decay must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Labelled data for one run. `features` are real and lifted to complex.
#[derive(Debug, Clone)]
pub enum TaskData {
    Node {
        features: Array2<f64>,
        labels: Vec<usize>,
        split: NodeSplit,
    },
    Link {
        features: Array2<f64>,
        split: LinkSplit,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Receives training events; used to audit evaluation order.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) {}
    fn on_evaluate(&mut self, _split: SplitKind) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    /// ChaCha stream id per consumer.
    pub streams: BTreeMap<String, u64>,
}

impl SeedRecord {
    pub fn new(master: u64) -> Self {
        let streams = [
            ("dsbm_edges", Stream::DSBM_EDGES),
            ("dsbm_features", Stream::DSBM_FEATURES),
            ("node_split", Stream::NODE_SPLIT),
            ("link_split", Stream::LINK_SPLIT),
            ("negatives", Stream::NEGATIVES),
            ("init", Stream::INIT),
            ("dropout", Stream::DROPOUT),
        ]
        .into_iter()
        .map(|(k, s)| (k.to_string(), s.0))
        .collect();
        Self { master, streams }
    }
}

/// Everything about a run except wall-clock time, so identical inputs give
/// byte-identical serializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: MagNetConfig,
    pub train: TrainConfig,
    pub seeds: SeedRecord,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub diverged_at: Option<usize>,
    pub test: Evaluation,
    /// Three-class link models only: direction accuracy on true-edge test pairs.
    pub test_direction_from_three_class: Option<f64>,
}

impl RunReport {
    pub fn test_acc(&self) -> f64 {
        self.test.accuracy
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Inputs prepared once per run.
struct Prepared {
    x0: ComplexFeatureMatrix,
    train_pairs: Vec<(usize, usize)>,
    train_targets: Vec<(usize, usize)>,
    /// Node task: `(row, label)` per split. Link task: instances per split.
    node_sets: Option<[Vec<(usize, usize)>; 3]>,
    link_sets: Option<[Vec<LinkInstance>; 3]>,
}

type IndexPairs = Vec<(usize, usize)>;

fn pairs_and_targets(insts: &[LinkInstance]) -> (IndexPairs, IndexPairs) {
    insts
        .iter()
        .enumerate()
        .map(|(i, l)| ((l.source, l.target), (i, l.label)))
        .unzip()
}

fn prepare(model: &MagNet, data: &TaskData) -> Result<Prepared> {
    let task = model.config().task;
    match data {
        TaskData::Node {
            features,
            labels,
            split,
        } => {
            if task != Task::NodeClassification {
                return Err(Error::InvalidConfig(
                    "node data given to a link-prediction model".into(),
                ));
            }
            if labels.len() != model.num_vertices() {
                return Err(Error::dims(model.num_vertices(), labels.len()));
            }
            split.validate(labels.len())?;
            if let Some(&c) = labels.iter().find(|&&c| c >= model.config().num_classes) {
                return Err(Error::InvalidConfig(format!(
                    "label {c} outside the model's {} classes",
                    model.config().num_classes
                )));
            }
            let set = |idx: &[usize]| idx.iter().map(|&v| (v, labels[v])).collect::<Vec<_>>();
            let sets = [set(&split.train), set(&split.val), set(&split.test)];
            if sets.iter().any(Vec::is_empty) {
                return Err(Error::Insufficient("every node split set must be non-empty".into()));
            }
            Ok(Prepared {
                x0: ComplexFeatureMatrix::from_real(features.clone()),
                train_pairs: Vec::new(),
                train_targets: sets[0].clone(),
                node_sets: Some(sets),
                link_sets: None,
            })
        }
        TaskData::Link { features, split } => {
            if task != Task::LinkPrediction {
                return Err(Error::InvalidConfig(
                    "link data given to a node-classification model".into(),
                ));
            }
            if split.scheme != model.config().link_scheme {
                return Err(Error::InvalidConfig(
                    "split scheme differs from the model's link scheme".into(),
                ));
            }
            let sets = [split.train.clone(), split.val.clone(), split.test.clone()];
            if sets.iter().any(Vec::is_empty) {
                return Err(Error::Insufficient("every link split set must be non-empty".into()));
            }
            let (train_pairs, train_targets) = pairs_and_targets(&sets[0]);
            Ok(Prepared {
                x0: ComplexFeatureMatrix::from_real(features.clone()),
                train_pairs,
                train_targets,
                node_sets: None,
                link_sets: Some(sets),
            })
        }
    }
}

/// Accuracy, mean cross-entropy and confusion matrix of `probs` rows against
/// `(row, label)` targets. Ties in the argmax go to the lowest class.
pub fn score(probs: &Array2<f64>, targets: &[(usize, usize)]) -> Result<Evaluation> {
    if targets.is_empty() {
        return Err(Error::Insufficient("cannot evaluate an empty split".into()));
    }
    let c = probs.ncols();
    let mut confusion = vec![vec![0u64; c]; c];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for &(r, y) in targets {
        let row = probs.row(r);
        let mut pred = 0;
        for k in 1..c {
            if row[k] > row[pred] {
                pred = k;
            }
        }
        confusion[y][pred] += 1;
        correct += usize::from(pred == y);
        loss -= row[y].ln();
    }
    Ok(Evaluation {
        accuracy: correct as f64 / targets.len() as f64,
        loss: loss / targets.len() as f64,
        confusion,
    })
}

fn eval_sets(model: &MagNet, prep: &Prepared, kinds: &[SplitKind]) -> Result<Vec<(Evaluation, Array2<f64>)>> {
    let idx = |k: SplitKind| match k {
        SplitKind::Train => 0,
        SplitKind::Val => 1,
        SplitKind::Test => 2,
    };
    if let Some(sets) = &prep.node_sets {
        let probs = model.forward_node(&prep.x0)?;
        return kinds
            .iter()
            .map(|&k| Ok((score(&probs, &sets[idx(k)])?, Array2::zeros((0, 0)))))
            .collect();
    }
    let sets = prep.link_sets.as_ref().expect("prepared link data");
    let mut pairs = Vec::new();
    let mut offsets = Vec::new();
    for &k in kinds {
        offsets.push(pairs.len());
        pairs.extend(sets[idx(k)].iter().map(|l| (l.source, l.target)));
    }
    let probs = model.forward_link(&prep.x0, &pairs)?;
    kinds
        .iter()
        .zip(offsets)
        .map(|(&k, off)| {
            let s = &sets[idx(k)];
            let block = probs.slice(ndarray::s![off..off + s.len(), ..]).to_owned();
            let targets: Vec<(usize, usize)> = s.iter().enumerate().map(|(i, l)| (i, l.label)).collect();
            Ok((score(&block, &targets)?, block))
        })
        .collect()
}

/// Accuracy and confusion matrix of the model on one split.
pub fn evaluate(model: &MagNet, data: &TaskData, split: SplitKind) -> Result<Evaluation> {
    let prep = prepare(model, data)?;
    Ok(eval_sets(model, &prep, &[split])?.remove(0).0)
}

/// Trains in place. On return the model holds the best-validation parameters
/// and the test split has been evaluated exactly once, with those parameters.
pub fn train(
    model: &mut MagNet,
    data: &TaskData,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<RunReport> {
    cfg.validate()?;
    let prep = prepare(model, data)?;
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut dropout_rng = stream_rng(seed, Stream::DROPOUT);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, f64, ParamStore)> = None;
    let mut diverged_at = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let logits = match model.config().task {
            Task::NodeClassification => model.record_node_logits(&mut tape, &prep.x0, Some(&mut dropout_rng))?,
            Task::LinkPrediction => {
                model.record_link_logits(&mut tape, &prep.x0, &prep.train_pairs, Some(&mut dropout_rng))?
            }
        };
        let loss = tape.softmax_xent(logits, &prep.train_targets)?;
        let train_loss = tape.value(loss).as_scalar();
        if !train_loss.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
        tape.backward(loss, &mut model.params);
        adam.step(&mut model.params);

        observer.on_evaluate(SplitKind::Train);
        observer.on_evaluate(SplitKind::Val);
        let evals = eval_sets(model, &prep, &[SplitKind::Train, SplitKind::Val])?;
        let (tr, va) = (&evals[0].0, &evals[1].0);
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc: tr.accuracy,
            val_loss: va.loss,
            val_acc: va.accuracy,
        };
        observer.on_epoch(&record);
        history.push(record);
        if va.loss.is_nan() {
            diverged_at = Some(epoch);
            break;
        }
        let improved = match &best {
            None => true,
            Some((_, acc, loss, _)) => va.accuracy > *acc || (va.accuracy == *acc && va.loss < *loss),
        };
        if improved {
            best = Some((epoch, va.accuracy, va.loss, model.params.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let Some((best_epoch, best_val_acc, best_val_loss, best_params)) = best else {
        return Err(Error::Numerical("training diverged before the first validation".into()));
    };
    model.params = best_params;
    observer.on_evaluate(SplitKind::Test);
    let (test, test_probs) = eval_sets(model, &prep, &[SplitKind::Test])?.remove(0);
    let test_direction_from_three_class = match (&prep.link_sets, model.config().link_scheme) {
        (Some(sets), LinkScheme::ThreeClass) => Some(direction_accuracy_from_three_class(&test_probs, &sets[2])?),
        _ => None,
    };
    Ok(RunReport {
        model: model.config().clone(),
        train: cfg.clone(),
        seeds: SeedRecord::new(seed),
        epochs_run: history.len(),
        history,
        best_epoch,
        best_val_acc,
        best_val_loss,
        stopped_early,
        diverged_at,
        test,
        test_direction_from_three_class,
    })
}

/// Graph used to build the operator, plus labelled data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: DirectedGraph,
    pub data: TaskData,
}

/// One model/training configuration of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub label: String,
    pub model: MagNetConfig,
    pub train: TrainConfig,
}

/// Builds a fresh model from `seed` and trains it, timing the run.
pub fn run_experiment(ds: &Dataset, exp: &Experiment, seed: u64) -> Result<(RunReport, f64)> {
    let start = Instant::now();
    let in_features = match &ds.data {
        TaskData::Node { features, .. } | TaskData::Link { features, .. } => features.ncols(),
    };
    let mut model = build_model(&ds.graph, &exp.model, in_features, seed)?;
    let report = train(&mut model, &ds.data, &exp.train, seed, &mut NoObserver)?;
    Ok((report, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: String,
    pub q: f64,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: String,
    pub q: f64,
    pub runs: usize,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
    /// Index into `summaries` of the highest mean validation accuracy; the
    /// earliest candidate wins ties.
    pub best: usize,
}

pub const CSV_HEADER: &str = "config,q,seed,val_acc,test_acc,epochs,seconds";

impl SweepTable {
    pub fn best_summary(&self) -> &SweepSummary {
        &self.summaries[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.3}",
                r.config, r.q, r.seed, r.val_acc, r.test_acc, r.epochs, r.seconds
            );
        }
        s
    }

    /// Fixed-width `config q val test` table with mean ± std columns.
    pub fn summary_text(&self) -> String {
        let mut s = format!("{:<24} {:>6} {:>16} {:>16}\n", "config", "q", "val", "test");
        for (i, m) in self.summaries.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>7.4} ± {:<6.4} {:>7.4} ± {:<6.4}{}",
                m.config,
                m.q,
                m.val_mean,
                m.val_std,
                m.test_mean,
                m.test_std,
                if i == self.best { "  *" } else { "" }
            );
        }
        s
    }
}

/// Mean and sample standard deviation (`n - 1`; zero for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates rows in candidate order and picks the best mean validation accuracy.
pub fn summarize(candidates: &[Experiment], rows: Vec<SweepRow>) -> SweepTable {
    let summaries: Vec<SweepSummary> = candidates
        .iter()
        .map(|c| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.config == c.label).collect();
            let val: Vec<f64> = mine.iter().map(|r| r.val_acc).collect();
            let test: Vec<f64> = mine.iter().map(|r| r.test_acc).collect();
            let (val_mean, val_std) = mean_std(&val);
            let (test_mean, test_std) = mean_std(&test);
            SweepSummary {
                config: c.label.clone(),
                q: c.model.q,
                runs: mine.len(),
                val_mean,
                val_std,
                test_mean,
                test_std,
            }
        })
        .collect();
    let mut best = 0;
    for (i, s) in summaries.iter().enumerate() {
        if s.val_mean > summaries[best].val_mean {
            best = i;
        }
    }
    SweepTable { rows, summaries, best }
}

/// Runs every candidate on every seed's dataset with `workers` threads.
/// `datasets[i]` belongs to `seeds[i]`. Rows come back in candidate-major,
/// seed-minor order regardless of scheduling.
pub fn grid_search(
    candidates: &[Experiment],
    datasets: &[Dataset],
    seeds: &[u64],
    workers: usize,
) -> Result<SweepTable> {
    if candidates.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one candidate and one seed".into(),
        ));
    }
    if datasets.len() != seeds.len() {
        return Err(Error::dims(seeds.len(), datasets.len()));
    }
    let mut labels: Vec<&str> = candidates.iter().map(|c| c.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != candidates.len() {
        return Err(Error::InvalidConfig("sweep candidate labels must be unique".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    let run = |&(c, s): &(usize, usize)| -> Result<SweepRow> {
        let exp = &candidates[c];
        let (report, seconds) = run_experiment(&datasets[s], exp, seeds[s])?;
        Ok(SweepRow {
            config: exp.label.clone(),
            q: exp.model.q,
            seed: seeds[s],
            val_acc: report.best_val_acc,
            test_acc: report.test_acc(),
            epochs: report.epochs_run,
            seconds,
        })
    };
    let rows: Vec<SweepRow> = if workers <= 1 {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    };
    Ok(summarize(candidates, rows))
}

/// [`grid_search`] over charge values with everything else fixed.
pub fn q_sweep(
    q_values: &[f64],
    base: &Experiment,
    datasets: &[Dataset],
    seeds: &[u64],
    workers: usize,
) -> Result<SweepTable> {
    if q_values.is_empty() {
        return Err(Error::InvalidConfig("q list is empty".into()));
    }
    let candidates: Vec<Experiment> = q_values
        .iter()
        .map(|&q| {
            let mut e = base.clone();
            e.model.q = q;
            e.label = if base.label.is_empty() {
                format!("q={q}")
            } else {
                format!("{}/q={q}", base.label)
            };
            e
        })
        .collect();
    for c in &candidates {
        c.model.validate()?;
    }
    grid_search(&candidates, datasets, seeds, workers)
}

/// Raw probabilities over a link instance list; a helper for audits.
pub fn link_probabilities(model: &MagNet, features: &Array2<f64>, insts: &[LinkInstance]) -> Result<Array2<f64>> {
    let pairs: Vec<(usize, usize)> = insts.iter().map(|l| (l.source, l.target)).collect();
    model.forward_link(&ComplexFeatureMatrix::from_real(features.clone()), &pairs)
}

/// Row-stochastic check used by the verify suite.
pub fn rows_sum_to_one(p: &Array2<f64>, tol: f64) -> bool {
    p.rows().into_iter().all(|r| (r.sum() - 1.0).abs() <= tol)
}
