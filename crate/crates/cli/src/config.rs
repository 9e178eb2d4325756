use std::path::{Path, PathBuf};

use magnet_core::data::{self, LinkSplitConfig, NodeSplit};
use magnet_core::dsbm::{self, cyclic_params, ordered_params, DsbmParams};
use magnet_core::graph::{read_edge_list, DirectedGraph};
use magnet_core::model::{LinkScheme, MagNetConfig, Task};
use magnet_core::train::{Dataset, TaskData, TrainConfig};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// DSBM family; the seed comes from the enclosing command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum DsbmSpec {
    Ordered {
        num_clusters: usize,
        num_vertices: usize,
        alpha_star: f64,
        /// Within-cluster density; defaults to `alpha_star`.
        #[serde(default)]
        alpha_diag: Option<f64>,
        beta_star: f64,
    },
    Cyclic {
        num_clusters: usize,
        num_vertices: usize,
        beta_star: f64,
        #[serde(default)]
        noisy: bool,
    },
    Custom {
        cluster_sizes: Vec<usize>,
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
    },
}

impl Default for DsbmSpec {
    fn default() -> Self {
        DsbmSpec::Ordered {
            num_clusters: 5,
            num_vertices: 2500,
            alpha_star: 0.1,
            alpha_diag: None,
            beta_star: 0.05,
        }
    }
}

impl DsbmSpec {
    pub fn params(&self, seed: u64) -> CliResult<DsbmParams> {
        let p = match self {
            DsbmSpec::Ordered {
                num_clusters,
                num_vertices,
                alpha_star,
                alpha_diag,
                beta_star,
            } => ordered_params(
                *num_clusters,
                *num_vertices,
                *alpha_star,
                alpha_diag.unwrap_or(*alpha_star),
                *beta_star,
                seed,
            )?,
            DsbmSpec::Cyclic {
                num_clusters,
                num_vertices,
                beta_star,
                noisy,
            } => cyclic_params(*num_clusters, *num_vertices, *beta_star, *noisy, seed)?,
            DsbmSpec::Custom {
                cluster_sizes,
                alpha,
                beta,
            } => {
                let p = DsbmParams {
                    cluster_sizes: cluster_sizes.clone(),
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                    seed,
                };
                p.validate()?;
                p
            }
        };
        Ok(p)
    }

    pub fn with_beta(&self, beta: f64) -> CliResult<Self> {
        let mut out = self.clone();
        match &mut out {
            DsbmSpec::Ordered { beta_star, .. } | DsbmSpec::Cyclic { beta_star, .. } => *beta_star = beta,
            DsbmSpec::Custom { .. } => {
                return Err(CliError::Usage(
                    "beta_values needs an ordered or cyclic DSBM preset".into(),
                ))
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dsbm: DsbmSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplacianConfig {
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub normalization: Option<String>,
    #[serde(default)]
    pub spectrum: bool,
    #[serde(default)]
    pub unrestricted_q: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub edges: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Dsbm(DsbmSpec),
    Files(FileSource),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// One standard-normal column.
    Gaussian,
    /// In- and out-degree columns, taken on the residual graph for link tasks.
    Degree,
    /// The `features` file of a file source.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeSplitSpec {
    Fractions { train: f64, val: f64, test: f64 },
    PerClass { train_per_class: usize, val_total: usize },
}

impl Default for NodeSplitSpec {
    fn default() -> Self {
        NodeSplitSpec::Fractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

fn default_test_frac() -> f64 {
    0.15
}

fn default_val_frac() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Node {
        #[serde(default)]
        split: NodeSplitSpec,
    },
    Link {
        scheme: LinkScheme,
        #[serde(default)]
        include_noisy: bool,
        #[serde(default = "default_test_frac")]
        test_frac: f64,
        #[serde(default = "default_val_frac")]
        val_frac: f64,
        #[serde(default)]
        allow_degenerate: bool,
    },
}

/// One end-to-end run: data, split, model and optimizer, all driven by `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub features: Option<FeatureKind>,
    pub task: TaskSpec,
    #[serde(default)]
    pub model: MagNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Axes of a hyperparameter grid; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub hidden_channels: Vec<usize>,
    #[serde(default)]
    pub lr: Vec<f64>,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub num_layers: Vec<usize>,
    #[serde(default)]
    pub dropout: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Its `seed` is ignored; each entry of `seeds` drives one dataset and run.
    pub experiment: ExperimentConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub q_values: Vec<f64>,
    /// Re-generates the DSBM at each `beta_star`.
    #[serde(default)]
    pub beta_values: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    /// Pick the grid point on the first seed's graph only, then run it on all.
    #[serde(default)]
    pub select_on_first: bool,
}

impl ExperimentConfig {
    /// Model config with the task fields taken from the task section.
    pub fn resolved_model(&self) -> MagNetConfig {
        let mut m = self.model.clone();
        match &self.task {
            TaskSpec::Node { .. } => m.task = Task::NodeClassification,
            TaskSpec::Link { scheme, .. } => {
                m.task = Task::LinkPrediction;
                m.link_scheme = *scheme;
                m.num_classes = scheme.num_classes();
            }
        }
        m
    }

    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.model = self.resolved_model();
        c.features = Some(self.feature_kind());
        c
    }

    pub fn feature_kind(&self) -> FeatureKind {
        if let Some(k) = self.features {
            return k;
        }
        match (&self.data, &self.task) {
            (DataSource::Files(FileSource { features: Some(_), .. }), _) => FeatureKind::File,
            (DataSource::Dsbm(_), TaskSpec::Node { .. }) => FeatureKind::Gaussian,
            _ => FeatureKind::Degree,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.resolved_model().validate()?;
        self.train.validate()?;
        if self.feature_kind() == FeatureKind::File
            && !matches!(&self.data, DataSource::Files(FileSource { features: Some(_), .. }))
        {
            return Err(CliError::Usage(
                "features = \"file\" needs a file source with a features path".into(),
            ));
        }
        Ok(())
    }
}

fn read_input<T>(path: &Path, f: impl FnOnce(&Path) -> magnet_core::Result<T>) -> CliResult<T> {
    if !path.exists() {
        return Err(CliError::Usage(format!("input file {} does not exist", path.display())));
    }
    Ok(f(path)?)
}

pub fn load_graph(path: &Path) -> CliResult<(DirectedGraph, Vec<u64>)> {
    let load = read_input(path, |p| read_edge_list(p))?;
    if load.duplicates_dropped > 0 {
        log::warn!(
            "{}: dropped {} duplicate edge(s)",
            path.display(),
            load.duplicates_dropped
        );
    }
    Ok((load.graph, load.original_ids))
}

/// Rows of a per-vertex file reindexed to the graph's vertex order.
fn by_original_id<T: Clone>(rows: Vec<T>, ids: &[u64], what: &str) -> CliResult<Vec<T>> {
    ids.iter()
        .map(|&id| {
            rows.get(id as usize)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("{what} file has no row for vertex id {id}")))
        })
        .collect()
}

/// Loaded graph and per-vertex data before splitting.
struct Source {
    graph: DirectedGraph,
    labels: Option<Vec<usize>>,
    file_features: Option<Array2<f64>>,
}

fn load_source(data: &DataSource, seed: u64) -> CliResult<Source> {
    match data {
        DataSource::Dsbm(spec) => {
            let s = dsbm::generate(&spec.params(seed)?)?;
            Ok(Source {
                graph: s.graph,
                labels: Some(s.labels),
                file_features: None,
            })
        }
        DataSource::Files(f) => {
            let (graph, ids) = load_graph(&f.edges)?;
            let labels = match &f.labels {
                Some(p) => Some(by_original_id(
                    read_input(p, |p| dsbm::read_labels(p))?,
                    &ids,
                    "labels",
                )?),
                None => None,
            };
            let file_features = match &f.features {
                Some(p) => {
                    let x = read_input(p, |p| dsbm::read_features(p))?;
                    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
                    let rows = by_original_id(rows, &ids, "features")?;
                    let flat: Vec<f64> = rows.concat();
                    Some(
                        Array2::from_shape_vec((ids.len(), x.ncols()), flat)
                            .map_err(|e| CliError::Usage(format!("features: {e}")))?,
                    )
                }
                None => None,
            };
            Ok(Source {
                graph,
                labels,
                file_features,
            })
        }
    }
}

/// Split description written next to a run's report.
pub enum SplitArtifact {
    Node(NodeSplit),
    Link(data::LinkSplit),
}

impl SplitArtifact {
    pub fn to_json(&self) -> CliResult<String> {
        Ok(match self {
            SplitArtifact::Node(s) => s.to_json()?,
            SplitArtifact::Link(s) => s.to_json()?,
        })
    }
}

/// Builds the dataset of one seed. For link tasks the graph is the residual
/// training graph.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Dataset, SplitArtifact)> {
    let src = load_source(&cfg.data, seed)?;
    let n = src.graph.num_vertices();
    let features = |g: &DirectedGraph| -> CliResult<Array2<f64>> {
        match cfg.feature_kind() {
            FeatureKind::Gaussian => Ok(dsbm::gaussian_features(n, seed)),
            FeatureKind::Degree => Ok(data::degree_features(g)),
            FeatureKind::File => src
                .file_features
                .clone()
                .ok_or_else(|| CliError::Usage("no features file given".into())),
        }
    };
    match &cfg.task {
        TaskSpec::Node { split } => {
            let labels = src
                .labels
                .clone()
                .ok_or_else(|| CliError::Usage("node classification needs labels".into()))?;
            if labels.len() != n {
                return Err(CliError::Usage(format!("{} labels for {n} vertices", labels.len())));
            }
            let split = match split {
                NodeSplitSpec::Fractions { train, val, test } => {
                    data::node_split_fraction(n, (*train, *val, *test), seed)?
                }
                NodeSplitSpec::PerClass {
                    train_per_class,
                    val_total,
                } => data::node_split_per_class(&labels, *train_per_class, *val_total, seed)?,
            };
            let x = features(&src.graph)?;
            let ds = Dataset {
                data: TaskData::Node {
                    features: x,
                    labels,
                    split: split.clone(),
                },
                graph: src.graph,
            };
            Ok((ds, SplitArtifact::Node(split)))
        }
        TaskSpec::Link {
            scheme,
            include_noisy,
            test_frac,
            val_frac,
            allow_degenerate,
        } => {
            let split = data::link_split(
                &src.graph,
                &LinkSplitConfig {
                    test_frac: *test_frac,
                    val_frac: *val_frac,
                    scheme: *scheme,
                    include_noisy: *include_noisy,
                    allow_degenerate: *allow_degenerate,
                    seed,
                },
            )?;
            let residual = split.residual_graph()?;
            let x = features(&residual)?;
            let ds = Dataset {
                data: TaskData::Link {
                    features: x,
                    split: split.clone(),
                },
                graph: residual,
            };
            Ok((ds, SplitArtifact::Link(split)))
        }
    }
}
