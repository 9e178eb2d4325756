//! Directed stochastic block model.
//!
//! Every unordered vertex pair `i < j` first receives an undirected edge with
//! probability `alpha(c_i, c_j)`, which is then oriented `i -> j` with
//! probability `beta(c_i, c_j)` and `j -> i` otherwise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::rng::{stream_rng, unit_f64, Stream};

const BETA_TOL: f64 = 1e-12;

/// DSBM parameters. `alpha` is symmetric; `beta(i, j) + beta(j, i) = 1`
/// wherever `alpha(i, j) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsbmParams {
    pub cluster_sizes: Vec<usize>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Sizes of `n_c` contiguous, nearly equal clusters; the first `n % n_c`
/// clusters take one extra vertex.
pub fn equal_cluster_sizes(n: usize, n_c: usize) -> Vec<usize> {
    (0..n_c).map(|c| n / n_c + usize::from(c < n % n_c)).collect()
}

impl DsbmParams {
    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    /// Cluster index of every vertex; clusters are contiguous id ranges.
    pub fn labels(&self) -> Vec<usize> {
        self.cluster_sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_clusters();
        if k == 0 {
            return Err(Error::InvalidParameter("at least one cluster is required".into()));
        }
        if self.alpha.len() != k || self.alpha.iter().any(|r| r.len() != k) {
            return Err(Error::dims(format!("{k}x{k} alpha"), "ragged or mis-sized alpha"));
        }
        if self.beta.len() != k || self.beta.iter().any(|r| r.len() != k) {
            return Err(Error::dims(format!("{k}x{k} beta"), "ragged or mis-sized beta"));
        }
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (self.alpha[i][j], self.beta[i][j]);
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::InvalidParameter(format!("alpha[{i}][{j}] = {a} outside [0, 1]")));
                }
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::InvalidParameter(format!("beta[{i}][{j}] = {b} outside [0, 1]")));
                }
                if a != self.alpha[j][i] {
                    return Err(Error::InvalidParameter(format!("alpha is not symmetric at ({i}, {j})")));
                }
                if a > 0.0 && (b + self.beta[j][i] - 1.0).abs() > BETA_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "beta[{i}][{j}] + beta[{j}][{i}] = {} but must equal 1",
                        b + self.beta[j][i]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Ordered meta-graph: edges between clusters point from lower to higher
/// index with probability `1 - beta_star`.
pub fn ordered_params(
    n_c: usize,
    n: usize,
    alpha_star: f64,
    alpha_diag: f64,
    beta_star: f64,
    seed: u64,
) -> Result<DsbmParams> {
    check_prob("alpha_star", alpha_star)?;
    check_prob("alpha_diag", alpha_diag)?;
    check_prob("beta_star", beta_star)?;
    let alpha = (0..n_c)
        .map(|i| (0..n_c).map(|j| if i == j { alpha_diag } else { alpha_star }).collect())
        .collect();
    let beta = (0..n_c)
        .map(|i| {
            (0..n_c)
                .map(|j| match i.cmp(&j) {
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Greater => beta_star,
                    std::cmp::Ordering::Less => 1.0 - beta_star,
                })
                .collect()
        })
        .collect();
    let p = DsbmParams {
        cluster_sizes: equal_cluster_sizes(n, n_c),
        alpha,
        beta,
        seed,
    };
    p.validate()?;
    Ok(p)
}

/// Cyclic meta-graph: cluster `i` sends edges to `i - 1 (mod n_c)` with
/// probability `beta_star`. The noisy variant connects every cluster pair
/// with `alpha = 0.1` and leaves non-cycle pairs unoriented.
pub fn cyclic_params(n_c: usize, n: usize, beta_star: f64, noisy: bool, seed: u64) -> Result<DsbmParams> {
    if !(beta_star > 0.0 && beta_star < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta_star = {beta_star} must lie in (0, 1)"
        )));
    }
    if n_c < 3 {
        return Err(Error::InvalidParameter(format!(
            "cyclic meta-graph needs n_c >= 3, got {n_c}"
        )));
    }
    let on_cycle = |i: usize, j: usize| (i + 1) % n_c == j || (j + 1) % n_c == i;
    let mut alpha = vec![vec![0.0; n_c]; n_c];
    let mut beta = vec![vec![0.5; n_c]; n_c];
    for i in 0..n_c {
        for j in 0..n_c {
            if i == j || on_cycle(i, j) || noisy {
                alpha[i][j] = 0.1;
            }
            if j == (i + n_c - 1) % n_c {
                beta[i][j] = beta_star;
                beta[j][i] = 1.0 - beta_star;
            }
        }
    }
    let p = DsbmParams {
        cluster_sizes: equal_cluster_sizes(n, n_c),
        alpha,
        beta,
        seed,
    };
    p.validate()?;
    Ok(p)
}

/// A generated graph with its ground-truth clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct DsbmSample {
    pub graph: DirectedGraph,
    pub labels: Vec<usize>,
}

/// Two-stage sampling; exactly two words of the `DSBM_EDGES` stream per
/// unordered pair in `(i < j)` order.
pub fn generate(params: &DsbmParams) -> Result<DsbmSample> {
    params.validate()?;
    let labels = params.labels();
    let n = labels.len();
    let mut rng = stream_rng(params.seed, Stream::DSBM_EDGES);
    let mut edges = Vec::new();
    for i in 0..n {
        let ci = labels[i];
        for (j, &cj) in labels.iter().enumerate().skip(i + 1) {
            let r_edge = unit_f64(rng.next_u64());
            let r_dir = unit_f64(rng.next_u64());
            if r_edge < params.alpha[ci][cj] {
                if r_dir < params.beta[ci][cj] {
                    edges.push((i, j));
                } else {
                    edges.push((j, i));
                }
            }
        }
    }
    Ok(DsbmSample {
        graph: DirectedGraph::new(n, edges)?,
        labels,
    })
}

/// One standard-normal feature per vertex from the `DSBM_FEATURES` stream.
pub fn gaussian_features(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, Stream::DSBM_FEATURES);
    Array2::from_shape_fn((n, 1), |_| rng.sample(StandardNormal))
}

/// Per-block edge counts of a labelled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    /// Unordered vertex pairs between blocks `i` and `j` (symmetric).
    pub pairs: Vec<Vec<u64>>,
    /// Adjacent unordered pairs between blocks `i` and `j` (symmetric).
    pub adjacent: Vec<Vec<u64>>,
    /// Directed edges from block `i` to block `j`.
    pub directed: Vec<Vec<u64>>,
}

pub fn block_stats(g: &DirectedGraph, labels: &[usize], n_c: usize) -> BlockStats {
    let mut sizes = vec![0u64; n_c];
    for &c in labels {
        sizes[c] += 1;
    }
    let mut pairs = vec![vec![0u64; n_c]; n_c];
    for i in 0..n_c {
        for j in 0..n_c {
            pairs[i][j] = if i == j {
                sizes[i] * sizes[i].saturating_sub(1) / 2
            } else {
                sizes[i] * sizes[j]
            };
        }
    }
    let mut adjacent = vec![vec![0u64; n_c]; n_c];
    let mut directed = vec![vec![0u64; n_c]; n_c];
    for &(u, v) in g.edges() {
        let (cu, cv) = (labels[u], labels[v]);
        directed[cu][cv] += 1;
        if u < v || !g.has_edge(v, u) {
            adjacent[cu][cv] += 1;
            if cu != cv {
                adjacent[cv][cu] += 1;
            }
        }
    }
    BlockStats {
        pairs,
        adjacent,
        directed,
    }
}

pub fn labels_string(labels: &[usize]) -> String {
    let mut s = String::new();
    for (v, c) in labels.iter().enumerate() {
        let _ = writeln!(s, "{v}\t{c}");
    }
    s
}

/// Parses `vertex<TAB>label` lines; vertices must be `0..n` in order.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            message,
        };
        let mut it = line.split_whitespace();
        let (Some(v), Some(c), None) = (it.next(), it.next(), it.next()) else {
            return Err(err(format!("expected `vertex<TAB>label`, got {line:?}")));
        };
        let v: usize = v.parse().map_err(|e| err(format!("bad vertex {v:?}: {e}")))?;
        let c: usize = c.parse().map_err(|e| err(format!("bad label {c:?}: {e}")))?;
        if v != labels.len() {
            return Err(err(format!("expected vertex {}, found {v}", labels.len())));
        }
        labels.push(c);
    }
    Ok(labels)
}

pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, labels_string(labels))?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_labels(&fs::read_to_string(path)?, path)
}

/// `vertex<TAB>f_0<TAB>f_1...` with shortest round-trip float formatting.
pub fn features_string(x: &Array2<f64>) -> String {
    let mut s = String::new();
    for (v, row) in x.rows().into_iter().enumerate() {
        let _ = write!(s, "{v}");
        for f in row {
            let _ = write!(s, "\t{f:?}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_features(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            message,
        };
        let mut it = line.split_whitespace();
        let v: usize = it
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e| err(format!("bad vertex: {e}")))?;
        if v != rows {
            return Err(err(format!("expected vertex {rows}, found {v}")));
        }
        let vals = it
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad feature {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => return Err(err(format!("expected {w} features, found {}", vals.len()))),
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), data).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_features(x: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, features_string(x))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    parse_features(&fs::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_tournament() {
        let p = DsbmParams {
            cluster_sizes: vec![100],
            alpha: vec![vec![1.0]],
            beta: vec![vec![0.5]],
            seed: 3,
        };
        let s = generate(&p).unwrap();
        assert_eq!(s.graph.num_edges(), 100 * 99 / 2);
        for i in 0..100 {
            for j in (i + 1)..100 {
                assert!(s.graph.has_edge(i, j) ^ s.graph.has_edge(j, i));
            }
        }
    }

    #[test]
    fn zero_alpha_is_empty() {
        let mut p = ordered_params(5, 50, 0.0, 0.0, 0.05, 1).unwrap();
        p.seed = 9;
        assert_eq!(generate(&p).unwrap().graph.num_edges(), 0);
    }

    #[test]
    fn ordered_params_shape() {
        let p = ordered_params(5, 2500, 0.1, 0.1, 0.05, 1).unwrap();
        assert_eq!(p.cluster_sizes, vec![500; 5]);
        assert_eq!(p.beta[3][1], 0.05);
        assert_eq!(p.beta[1][3], 0.95);
        assert_eq!(p.beta[2][2], 0.5);
        assert_eq!(p.alpha[0][4], 0.1);
        let flat = ordered_params(5, 100, 0.1, 0.1, 0.5, 1).unwrap();
        assert!(flat.beta.iter().flatten().all(|&b| b == 0.5));
    }

    #[test]
    fn cyclic_params_shape() {
        let p = cyclic_params(5, 100, 0.05, false, 1).unwrap();
        assert_eq!(p.alpha[0][4], 0.1);
        assert_eq!(p.alpha[0][2], 0.0);
        assert_eq!(p.beta[0][4], 0.05);
        assert_eq!(p.beta[4][0], 0.95);
        assert_eq!(p.beta[1][0], 0.05);
        let noisy = cyclic_params(5, 100, 0.05, true, 1).unwrap();
        assert!(noisy.alpha.iter().flatten().all(|&a| a == 0.1));
        assert_eq!(noisy.beta[0][2], 0.5);
        let sym = cyclic_params(5, 100, 0.5, true, 1).unwrap();
        assert!(sym.beta.iter().flatten().all(|&b| b == 0.5));
    }

    #[test]
    fn invalid_beta_rejected() {
        let mut p = ordered_params(3, 30, 0.1, 0.1, 0.05, 1).unwrap();
        p.beta[0][1] = 0.5;
        assert!(matches!(p.validate(), Err(Error::InvalidParameter(_))));
        let mut p = ordered_params(3, 30, 0.1, 0.1, 0.05, 1).unwrap();
        p.alpha[0][1] = 0.2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn uneven_clusters() {
        assert_eq!(equal_cluster_sizes(12, 5), vec![3, 3, 2, 2, 2]);
    }

    #[test]
    fn deterministic_and_antisymmetric() {
        let p = ordered_params(5, 200, 0.1, 0.1, 0.05, 4).unwrap();
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a, b);
        assert!(a.graph.edges().iter().all(|&(u, v)| !a.graph.has_edge(v, u) && u != v));
    }

    #[test]
    fn files_round_trip() {
        let x = gaussian_features(7, 2);
        let p = Path::new("mem");
        assert_eq!(parse_features(&features_string(&x), p).unwrap(), x);
        let labels = vec![0, 3, 1, 1];
        assert_eq!(parse_labels(&labels_string(&labels), p).unwrap(), labels);
    }
}
