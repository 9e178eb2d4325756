use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use magnet_core::dsbm::{self, gaussian_features};
use magnet_core::graph::{edge_list_string, Charge};
use magnet_core::model::build_model;
use magnet_core::spectral::{
    build_laplacian, eigendecompose, eigendecompose_hermitian, laplacian_to_string, renormalized_propagation,
    Normalization, DENSE_EIGEN_CAP,
};
use magnet_core::train::{self, grid_search, Experiment, NoObserver, SweepTable, TaskData, CSV_HEADER};
use magnet_core::verify::{run_suite, VerifyOptions};
use magnet_core::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{self, build_dataset, DataSource, ExperimentConfig, GenerateConfig, LaplacianConfig, SweepConfig};
use crate::error::{CliError, CliResult};
use crate::plot::{accuracy_chart, Series};

/// Budget cap applied by `--quick`.
const QUICK_EPOCHS: usize = 200;
const QUICK_PATIENCE: usize = 50;
const QUICK_SEEDS: usize = 2;

/// Output directory that remembers what was written to it.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
            context: format!("creating {}", dir.display()),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Output {
            context: format!("writing {}", path.display()),
            source,
        })
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn manifest(&mut self, command: &str, seed: Option<u64>, quick: bool, config: impl Serialize) -> CliResult<()> {
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "quick": quick,
            "config": config,
            "outputs": self.files,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
        self.write("manifest.json", &(text + "\n"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quick: bool,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("magnet-out"))
    }

    fn require_config(&self, command: &str) -> CliResult<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("`magnet {command}` needs --config PATH")))
    }
}

fn json_text<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)?)
}

pub fn generate(common: &Common) -> CliResult<()> {
    let mut cfg: GenerateConfig = match &common.config {
        Some(p) => config::load(p)?,
        None => GenerateConfig {
            seed: 0,
            dsbm: Default::default(),
        },
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let params = cfg.dsbm.params(cfg.seed)?;
    let sample = dsbm::generate(&params)?;
    let n = sample.graph.num_vertices();
    let mut out = Outputs::create(&common.out_dir())?;
    out.write("graph.edges", &edge_list_string(&sample.graph))?;
    out.write("labels.tsv", &dsbm::labels_string(&sample.labels))?;
    out.write("features.tsv", &dsbm::features_string(&gaussian_features(n, cfg.seed)))?;
    out.write("params.json", &json_text(&params)?)?;
    out.manifest("generate", Some(cfg.seed), common.quick, &cfg)?;
    println!(
        "generated {n} vertices, {} edges into {}",
        sample.graph.num_edges(),
        common.out_dir().display()
    );
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct LaplacianArgs {
    pub graph: Option<PathBuf>,
    pub q: Option<f64>,
    pub normalization: Option<String>,
    pub spectrum: bool,
    pub unrestricted_q: bool,
}

fn triplets_string(n: usize, q: f64, label: &str, m: &magnet_core::ComplexSparseMatrix) -> String {
    let mut s = format!("{n} {q} {label}\n");
    for (r, c, z) in m.iter() {
        let _ = writeln!(s, "{r} {c} {:.16e} {:.16e}", z.re, z.im);
    }
    s
}

pub fn laplacian(common: &Common, args: &LaplacianArgs) -> CliResult<()> {
    let mut cfg: LaplacianConfig = match &common.config {
        Some(p) => config::load(p)?,
        None => LaplacianConfig {
            graph: None,
            q: None,
            normalization: None,
            spectrum: false,
            unrestricted_q: false,
        },
    };
    if args.graph.is_some() {
        cfg.graph = args.graph.clone();
    }
    if args.q.is_some() {
        cfg.q = args.q;
    }
    if args.normalization.is_some() {
        cfg.normalization = args.normalization.clone();
    }
    cfg.spectrum |= args.spectrum;
    cfg.unrestricted_q |= args.unrestricted_q;
    let q = *cfg.q.get_or_insert(0.25);
    let mode = cfg.normalization.get_or_insert_with(|| "unnormalized".into()).clone();
    let graph_path = cfg
        .graph
        .clone()
        .ok_or_else(|| CliError::Usage("`magnet laplacian` needs --graph PATH".into()))?;
    let (g, _) = config::load_graph(&graph_path)?;
    let charge = if cfg.unrestricted_q {
        Charge::unrestricted(q)?
    } else {
        Charge::new(q)?
    };
    let n = g.num_vertices();
    let (text, matrix) = if mode == "renormalized" {
        let m = renormalized_propagation(&g, charge);
        (triplets_string(n, q, "renormalized", &m), m)
    } else {
        let norm: Normalization = mode.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
        let l = build_laplacian(&g, charge, norm).map_err(|e| match e {
            Error::IsolatedVertex(_) => CliError::Usage(format!("{e} (--normalization renormalized)")),
            other => other.into(),
        })?;
        (laplacian_to_string(&l), l.matrix().clone())
    };
    let mut out = Outputs::create(&common.out_dir())?;
    out.write("laplacian.txt", &text)?;
    if cfg.spectrum {
        if n > DENSE_EIGEN_CAP {
            return Err(CliError::Usage(format!(
                "--spectrum is limited to N <= {DENSE_EIGEN_CAP}, graph has N = {n}"
            )));
        }
        let values = if mode == "renormalized" {
            eigendecompose_hermitian(&matrix, DENSE_EIGEN_CAP)?.eigenvalues
        } else {
            let l = magnet_core::MagneticLaplacian::from_matrix(q, mode.parse().expect("checked"), matrix)?;
            eigendecompose(&l)?.eigenvalues
        };
        let mut csv = String::from("index,eigenvalue\n");
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(csv, "{i},{v:.16e}");
        }
        out.write("spectrum.csv", &csv)?;
        if n <= 32 {
            let shown: Vec<String> = values
                .iter()
                .map(|&v| format!("{:.6}", if v.abs() < 1e-12 { 0.0 } else { v }))
                .collect();
            println!("eigenvalues: {}", shown.join(" "));
        } else {
            println!("eigenvalues: min {:.6}, max {:.6}", values[0], values[n - 1]);
        }
    }
    out.manifest("laplacian", None, common.quick, &cfg)?;
    println!(
        "wrote {mode} operator for N = {n}, q = {q} into {}",
        common.out_dir().display()
    );
    Ok(())
}

fn apply_quick(cfg: &mut ExperimentConfig) {
    cfg.train.max_epochs = cfg.train.max_epochs.min(QUICK_EPOCHS);
    cfg.train.patience = cfg.train.patience.min(QUICK_PATIENCE);
}

pub fn train(common: &Common) -> CliResult<()> {
    let path = common.require_config("train")?;
    let mut cfg: ExperimentConfig = config::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.quick {
        apply_quick(&mut cfg);
    }
    cfg.validate()?;
    let cfg = cfg.resolved();
    let (ds, split) = build_dataset(&cfg, cfg.seed)?;
    let in_features = match &ds.data {
        TaskData::Node { features, .. } | TaskData::Link { features, .. } => features.ncols(),
    };
    let start = Instant::now();
    let mut model = build_model(&ds.graph, &cfg.model, in_features, cfg.seed)?;
    let report = train::train(&mut model, &ds.data, &cfg.train, cfg.seed, &mut NoObserver)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut out = Outputs::create(&common.out_dir())?;
    out.write("report.json", &report.to_json()?)?;
    let mut history = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in &report.history {
        let _ = writeln!(
            history,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    out.write("history.csv", &history)?;
    out.write(
        "result.csv",
        &format!(
            "{CSV_HEADER}\ntrain,{},{},{},{},{},{seconds:.3}\n",
            cfg.model.q,
            cfg.seed,
            report.best_val_acc,
            report.test_acc(),
            report.epochs_run
        ),
    )?;
    out.write("timing.json", &json_text(&json!({ "seconds": seconds }))?)?;
    out.write("checkpoint.json", &model.checkpoint().to_json()?)?;
    out.write("split.json", &split.to_json()?)?;
    out.manifest("train", Some(cfg.seed), common.quick, &cfg)?;

    if let Some(epoch) = report.diverged_at {
        log::warn!("training diverged at epoch {epoch}");
    }
    print!(
        "test accuracy {:.4} (best epoch {}, {} epochs",
        report.test_acc(),
        report.best_epoch,
        report.epochs_run
    );
    if let Some(d) = report.test_direction_from_three_class {
        print!(", direction accuracy {d:.4}");
    }
    println!(") in {seconds:.1}s");
    Ok(())
}

pub fn workers(flag: Option<usize>) -> CliResult<usize> {
    if let Some(w) = flag {
        return Ok(w.max(1));
    }
    match std::env::var("MAGNET_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|w| w.max(1))
            .map_err(|_| CliError::Usage(format!("MAGNET_WORKERS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Grid points crossed with every charge value, labelled by their axes.
fn candidates(cfg: &SweepConfig, prefix: &str) -> CliResult<Vec<Experiment>> {
    if cfg.q_values.is_empty() {
        return Err(CliError::Usage("q_values is empty".into()));
    }
    let base = cfg.experiment.resolved_model();
    let g = &cfg.grid;
    let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
    let or_base_u = |v: &[usize], b: usize| if v.is_empty() { vec![b] } else { v.to_vec() };
    let mut out = Vec::new();
    for &hidden in &or_base_u(&g.hidden_channels, base.hidden_channels) {
        for &lr in &or_base(&g.lr, cfg.experiment.train.lr) {
            for &k in &or_base_u(&g.k, base.k) {
                for &layers in &or_base_u(&g.num_layers, base.num_layers) {
                    for &dropout in &or_base(&g.dropout, base.dropout) {
                        let mut parts = Vec::new();
                        if !g.hidden_channels.is_empty() {
                            parts.push(format!("hidden={hidden}"));
                        }
                        if !g.lr.is_empty() {
                            parts.push(format!("lr={lr}"));
                        }
                        if !g.k.is_empty() {
                            parts.push(format!("K={k}"));
                        }
                        if !g.num_layers.is_empty() {
                            parts.push(format!("L={layers}"));
                        }
                        if !g.dropout.is_empty() {
                            parts.push(format!("dropout={dropout}"));
                        }
                        for &q in &cfg.q_values {
                            let mut label = prefix.to_string();
                            for p in &parts {
                                label.push_str(p);
                                label.push(' ');
                            }
                            label.push_str(&format!("q={q}"));
                            let mut e = Experiment {
                                label,
                                model: base.clone(),
                                train: cfg.experiment.train.clone(),
                            };
                            e.model.hidden_channels = hidden;
                            e.model.k = k;
                            e.model.num_layers = layers;
                            e.model.dropout = dropout;
                            e.model.q = q;
                            e.train.lr = lr;
                            e.model.validate()?;
                            e.train.validate()?;
                            out.push(e);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per charge value, the summary with the best mean validation accuracy.
fn best_per_q(table: &SweepTable, qs: &[f64]) -> Vec<(f64, f64, f64)> {
    qs.iter()
        .filter_map(|&q| {
            table
                .summaries
                .iter()
                .filter(|s| s.q == q)
                .reduce(|a, b| if b.val_mean > a.val_mean { b } else { a })
                .map(|s| (q, s.test_mean, s.test_std))
        })
        .collect()
}

#[derive(Serialize)]
struct SweepBlock<'a> {
    beta_star: Option<f64>,
    selection: Option<&'a SweepTable>,
    table: &'a SweepTable,
}

pub fn sweep(common: &Common, plot: bool, workers_flag: Option<usize>) -> CliResult<()> {
    let path = common.require_config("sweep")?;
    let mut cfg: SweepConfig = config::load(path)?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if common.quick {
        apply_quick(&mut cfg.experiment);
        cfg.seeds.truncate(QUICK_SEEDS);
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("seeds is empty".into()));
    }
    cfg.experiment.validate()?;
    let workers = workers(workers_flag)?;
    let betas: Vec<Option<f64>> = if cfg.beta_values.is_empty() {
        vec![None]
    } else {
        cfg.beta_values.iter().map(|&b| Some(b)).collect()
    };
    for &b in betas.iter().flatten() {
        if let DataSource::Dsbm(spec) = &cfg.experiment.data {
            spec.with_beta(b)?;
        } else {
            return Err(CliError::Usage("beta_values needs a DSBM data source".into()));
        }
    }

    let mut results: Vec<(Option<f64>, Option<SweepTable>, SweepTable)> = Vec::new();
    for &beta in &betas {
        let mut exp = cfg.experiment.clone();
        let prefix = match beta {
            Some(b) => {
                if let DataSource::Dsbm(spec) = &exp.data {
                    exp.data = DataSource::Dsbm(spec.with_beta(b)?);
                }
                format!("beta={b}/")
            }
            None => String::new(),
        };
        let mut sub = cfg.clone();
        sub.experiment = exp;
        let cands = candidates(&sub, &prefix)?;
        let datasets = cfg
            .seeds
            .iter()
            .map(|&s| build_dataset(&sub.experiment, s).map(|(d, _)| d))
            .collect::<CliResult<Vec<_>>>()?;
        if cfg.select_on_first {
            let selection = grid_search(&cands, &datasets[..1], &cfg.seeds[..1], workers)?;
            let chosen: Vec<Experiment> = cfg
                .q_values
                .iter()
                .filter_map(|&q| {
                    let best = selection
                        .summaries
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.q == q)
                        .reduce(|a, b| if b.1.val_mean > a.1.val_mean { b } else { a })?;
                    Some(cands[best.0].clone())
                })
                .collect();
            let table = grid_search(&chosen, &datasets, &cfg.seeds, workers)?;
            results.push((beta, Some(selection), table));
        } else {
            let table = grid_search(&cands, &datasets, &cfg.seeds, workers)?;
            results.push((beta, None, table));
        }
    }

    let mut out = Outputs::create(&common.out_dir())?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut selection_csv = format!("{CSV_HEADER}\n");
    let mut summary = String::new();
    for (beta, selection, table) in &results {
        csv.push_str(table.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
        if let Some(s) = selection {
            selection_csv.push_str(s.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
        }
        if let Some(b) = beta {
            let _ = writeln!(summary, "beta* = {b}");
        }
        summary.push_str(&table.summary_text());
        summary.push('\n');
    }
    out.write("sweep.csv", &csv)?;
    if cfg.select_on_first {
        out.write("selection.csv", &selection_csv)?;
    }
    out.write("summary.txt", &summary)?;
    let blocks: Vec<SweepBlock> = results
        .iter()
        .map(|(beta, selection, table)| SweepBlock {
            beta_star: *beta,
            selection: selection.as_ref(),
            table,
        })
        .collect();
    out.write("summary.json", &json_text(&blocks)?)?;

    if plot {
        let by_beta: Vec<Series> = results
            .iter()
            .map(|(beta, _, table)| Series {
                name: beta.map_or("MagNet".to_string(), |b| format!("beta* = {b}")),
                points: best_per_q(table, &cfg.q_values),
            })
            .collect();
        let p = out.path("accuracy_vs_q.svg");
        accuracy_chart(&p, "Accuracy against charge parameter", "q", &by_beta)?;
        if !cfg.beta_values.is_empty() {
            let by_q: Vec<Series> = cfg
                .q_values
                .iter()
                .map(|&q| Series {
                    name: format!("q = {q}"),
                    points: results
                        .iter()
                        .filter_map(|(beta, _, table)| {
                            let b = (*beta)?;
                            best_per_q(table, &[q]).first().map(|&(_, m, s)| (b, m, s))
                        })
                        .collect(),
                })
                .collect();
            let p = out.path("accuracy_vs_beta.svg");
            accuracy_chart(&p, "Accuracy against direction strength", "beta*", &by_q)?;
        }
    }
    out.manifest("sweep", None, common.quick, &cfg)?;
    print!("{summary}");
    Ok(())
}

pub fn verify(common: &Common, inject_sign_flip: bool) -> CliResult<()> {
    let report = run_suite(VerifyOptions {
        quick: common.quick,
        inject_phase_sign_flip: inject_sign_flip,
        seed: common.seed.unwrap_or(0),
    });
    for c in &report.checks {
        println!(
            "{} {:<14} {} ({:.2}s)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail,
            c.seconds
        );
    }
    if let Some(dir) = &common.out {
        let mut out = Outputs::create(dir)?;
        out.write("verify.json", &json_text(&report)?)?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
