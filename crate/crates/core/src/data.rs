//! Features, node splits and the link-prediction split/label protocol.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::model::LinkScheme;
use crate::rng::{stream_rng, Stream};

/// `[in-degree, out-degree]` per vertex.
pub fn degree_features(g: &DirectedGraph) -> Array2<f64> {
    let (ins, outs) = (g.in_degrees(), g.out_degrees());
    Array2::from_shape_fn((g.num_vertices(), 2), |(v, c)| {
        if c == 0 {
            ins[v] as f64
        } else {
            outs[v] as f64
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSplit {
    pub scheme: String,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplit {
    /// Disjointness and range check.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            if v >= n {
                return Err(Error::InvalidParameter(format!("split vertex {v} outside 0..{n}")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidParameter(format!("vertex {v} appears in two split sets")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `train_per_class` random vertices of every class for training, then
/// `val_total` uniformly from the remainder for validation; the rest test.
pub fn node_split_per_class(
    labels: &[usize],
    train_per_class: usize,
    val_total: usize,
    seed: u64,
) -> Result<NodeSplit> {
    let mut rng = stream_rng(seed, Stream::NODE_SPLIT);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(v);
    }
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for (c, mut members) in by_class {
        if members.len() < train_per_class {
            return Err(Error::Insufficient(format!(
                "class {c} has {} vertices, fewer than {train_per_class} requested for training",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        rest.extend_from_slice(&members[train_per_class..]);
        train.extend(members.into_iter().take(train_per_class));
    }
    if rest.len() < val_total {
        return Err(Error::Insufficient(format!(
            "{} vertices remain after training selection, fewer than {val_total} for validation",
            rest.len()
        )));
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    let test = rest.split_off(val_total);
    let (mut train, mut val, mut test) = (train, rest, test);
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit {
        scheme: format!("per_class:{train_per_class}:{val_total}"),
        seed,
        train,
        val,
        test,
    })
}

/// Random split of `0..n` with `floor(f_val n)` validation and
/// `floor(f_test n)` test vertices; the rounding remainder goes to training.
pub fn node_split_fraction(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<NodeSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n_val = (fv * n as f64).floor() as usize;
    let n_test = (fs * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Insufficient(format!(
            "split of {n} vertices gives sizes {n_train}/{n_val}/{n_test}; every set must be non-empty"
        )));
    }
    let mut rng = stream_rng(seed, Stream::NODE_SPLIT);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit {
        scheme: format!("fraction:{ft}:{fv}:{fs}"),
        seed,
        train,
        val,
        test,
    })
}

/// An ordered vertex pair with its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkInstance {
    pub source: usize,
    pub target: usize,
    pub label: usize,
}

/// Labels: `direction` 0 = `(u, v)` in E, 1 = reversed true edge.
/// `existence` 0 = edge present, 1 = absent. `three_class` 0 and 1 as in
/// direction, 2 = no edge in either direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSplit {
    pub scheme: LinkScheme,
    pub include_noisy: bool,
    pub seed: u64,
    pub num_vertices: usize,
    pub num_edges: usize,
    pub test_edges: Vec<(usize, usize)>,
    pub val_edges: Vec<(usize, usize)>,
    /// Edges remaining for the operator and the degree features.
    pub residual_edges: Vec<(usize, usize)>,
    pub train: Vec<LinkInstance>,
    pub val: Vec<LinkInstance>,
    pub test: Vec<LinkInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSplitConfig {
    pub test_frac: f64,
    pub val_frac: f64,
    pub scheme: LinkScheme,
    /// Keep reciprocal pairs in the sampled label sets.
    pub include_noisy: bool,
    /// Return empty evaluation sets instead of an error when a target size
    /// rounds to zero.
    pub allow_degenerate: bool,
    pub seed: u64,
}

impl Default for LinkSplitConfig {
    fn default() -> Self {
        Self {
            test_frac: 0.15,
            val_frac: 0.05,
            scheme: LinkScheme::Direction,
            include_noisy: false,
            allow_degenerate: false,
            seed: 0,
        }
    }
}

impl LinkSplit {
    pub fn residual_graph(&self) -> Result<DirectedGraph> {
        DirectedGraph::new(self.num_vertices, self.residual_edges.iter().copied())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Undirected adjacencies `(a, b)`, `a < b`, of a BFS spanning forest rooted
/// at the smallest vertex of each component, neighbours in ascending order.
pub fn bfs_spanning_forest(g: &DirectedGraph) -> Vec<(usize, usize)> {
    let nbrs = g.undirected_neighbors();
    let n = g.num_vertices();
    let mut seen = vec![false; n];
    let mut tree = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &w in &nbrs[u] {
                if !seen[w] {
                    seen[w] = true;
                    tree.push((u.min(w), u.max(w)));
                    queue.push_back(w);
                }
            }
        }
    }
    tree.sort_unstable();
    tree
}

/// Splits the edges of `g` into residual/validation/test sets that keep a
/// spanning tree of the symmetrized graph, then labels each set.
pub fn link_split(g: &DirectedGraph, cfg: &LinkSplitConfig) -> Result<LinkSplit> {
    for (name, f) in [("test_frac", cfg.test_frac), ("val_frac", cfg.val_frac)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("{name} = {f} outside [0, 1)")));
        }
    }
    let m = g.num_edges();
    let n_test = (cfg.test_frac * m as f64).floor() as usize;
    let n_val = (cfg.val_frac * m as f64).floor() as usize;
    if (n_test == 0 && cfg.test_frac > 0.0 || n_val == 0 && cfg.val_frac > 0.0) && !cfg.allow_degenerate {
        return Err(Error::Insufficient(format!(
            "{m} edges give {n_test} test and {n_val} validation edges; enable allow_degenerate to accept empty sets"
        )));
    }
    if g.undirected_components() > 1 {
        log::warn!(
            "graph has {} weakly connected components; each is kept connected separately",
            g.undirected_components()
        );
    }

    // Group edges by unordered pair.
    let mut groups: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for &(u, v) in g.edges() {
        groups.entry((u.min(v), u.max(v))).or_default().push((u, v));
    }
    let tree: HashSet<(usize, usize)> = bfs_spanning_forest(g).into_iter().collect();
    let mut protected: HashSet<(usize, usize)> = HashSet::new();
    let mut candidates: Vec<Vec<(usize, usize)>> = Vec::new();
    for (key, members) in &groups {
        let reciprocal = members.len() > 1;
        if tree.contains(key) {
            if cfg.include_noisy {
                protected.extend(members.iter().copied());
            } else {
                protected.insert(members[0]);
            }
            continue;
        }
        if reciprocal && !cfg.include_noisy {
            continue;
        }
        candidates.push(members.clone());
    }
    let capacity: usize = candidates.iter().map(Vec::len).sum();
    if capacity < n_test + n_val && !cfg.allow_degenerate {
        return Err(Error::Insufficient(format!(
            "only {capacity} removable edges but {} requested ({n_test} test + {n_val} validation)",
            n_test + n_val
        )));
    }
    let mut rng = stream_rng(cfg.seed, Stream::LINK_SPLIT);
    candidates.shuffle(&mut rng);
    let mut pool = candidates.into_iter();
    let mut take = |target: usize| {
        let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut count = 0;
        while count < target {
            match pool.next() {
                Some(grp) => {
                    count += grp.len();
                    out.push(grp);
                }
                None => break,
            }
        }
        out
    };
    let test_groups = take(n_test);
    let val_groups = take(n_val);
    let flatten = |gs: &[Vec<(usize, usize)>]| {
        let mut v: Vec<(usize, usize)> = gs.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    };
    let test_edges = flatten(&test_groups);
    let val_edges = flatten(&val_groups);
    let removed: HashSet<(usize, usize)> = test_edges.iter().chain(&val_edges).copied().collect();
    let residual_edges: Vec<(usize, usize)> = g.edges().iter().copied().filter(|e| !removed.contains(e)).collect();

    // Positive sets per split: whole groups, eligible edges only.
    let residual_graph = DirectedGraph::new(g.num_vertices(), residual_edges.iter().copied())?;
    let eligible = |e: &(usize, usize)| cfg.include_noisy || !g.is_reciprocal(e.0, e.1);
    let train_pos: Vec<(usize, usize)> = residual_edges.iter().copied().filter(eligible).collect();
    let val_pos: Vec<(usize, usize)> = val_edges.iter().copied().filter(eligible).collect();
    let test_pos: Vec<(usize, usize)> = test_edges.iter().copied().filter(eligible).collect();
    debug_assert!(residual_graph.num_edges() + removed.len() == m);

    let mut neg = NegativeSampler::new(g, cfg);
    let mut label_rng = rng;
    let train = label_set(&train_pos, cfg, &mut label_rng, &mut neg)?;
    let val = label_set(&val_pos, cfg, &mut label_rng, &mut neg)?;
    let test = label_set(&test_pos, cfg, &mut label_rng, &mut neg)?;
    Ok(LinkSplit {
        scheme: cfg.scheme,
        include_noisy: cfg.include_noisy,
        seed: cfg.seed,
        num_vertices: g.num_vertices(),
        num_edges: m,
        test_edges,
        val_edges,
        residual_edges,
        train,
        val,
        test,
    })
}

struct NegativeSampler<'a> {
    g: &'a DirectedGraph,
    rng: rand_chacha::ChaCha8Rng,
    used: HashSet<(usize, usize)>,
    both_directions: bool,
}

impl<'a> NegativeSampler<'a> {
    fn new(g: &'a DirectedGraph, cfg: &LinkSplitConfig) -> Self {
        let both_directions = match cfg.scheme {
            LinkScheme::ThreeClass => true,
            LinkScheme::Existence => cfg.include_noisy,
            LinkScheme::Direction => false,
        };
        Self {
            g,
            rng: stream_rng(cfg.seed, Stream::NEGATIVES),
            used: HashSet::new(),
            both_directions,
        }
    }

    /// Ordered pairs still drawable. With `both_directions` every draw also
    /// retires its reverse, so a pair's reverse never lands in another split.
    fn available(&self) -> usize {
        let n = self.g.num_vertices();
        let ordered = n * n.saturating_sub(1);
        let blocked = if self.both_directions {
            let recip = self.g.edges().iter().filter(|&&(u, v)| self.g.has_edge(v, u)).count();
            2 * self.g.num_edges() - recip
        } else {
            self.g.num_edges()
        };
        ordered - blocked - self.used.len()
    }

    fn sample(&mut self, count: usize) -> Result<Vec<(usize, usize)>> {
        if count > self.available() {
            return Err(Error::Insufficient(format!(
                "{count} negative pairs requested but only {} remain",
                self.available()
            )));
        }
        let n = self.g.num_vertices();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let a = self.rng.gen_range(0..n);
            let b = self.rng.gen_range(0..n);
            if a == b || self.g.has_edge(a, b) || (self.both_directions && self.g.has_edge(b, a)) {
                continue;
            }
            if self.used.contains(&(a, b)) {
                continue;
            }
            self.used.insert((a, b));
            if self.both_directions {
                self.used.insert((b, a));
            }
            out.push((a, b));
        }
        Ok(out)
    }
}

fn label_set(
    positives: &[(usize, usize)],
    cfg: &LinkSplitConfig,
    rng: &mut impl Rng,
    neg: &mut NegativeSampler<'_>,
) -> Result<Vec<LinkInstance>> {
    let inst = |(source, target): (usize, usize), label| LinkInstance { source, target, label };
    let directed_halves = |rng: &mut dyn rand::RngCore| {
        let mut pos = positives.to_vec();
        pos.shuffle(rng);
        let half = pos.len().div_ceil(2);
        pos.iter()
            .enumerate()
            .map(|(i, &(u, v))| if i < half { inst((u, v), 0) } else { inst((v, u), 1) })
            .collect::<Vec<_>>()
    };
    let mut out = match cfg.scheme {
        LinkScheme::Direction => directed_halves(rng),
        LinkScheme::Existence => {
            let n_neg = if cfg.include_noisy {
                3 * positives.len()
            } else {
                positives.len()
            };
            let mut v: Vec<LinkInstance> = positives.iter().map(|&e| inst(e, 0)).collect();
            v.extend(neg.sample(n_neg)?.into_iter().map(|e| inst(e, 1)));
            v
        }
        LinkScheme::ThreeClass => {
            let mut v = directed_halves(rng);
            v.extend(neg.sample(positives.len())?.into_iter().map(|e| inst(e, 2)));
            v
        }
    };
    out.sort_unstable_by_key(|i| (i.source, i.target, i.label));
    Ok(out)
}

/// Task (4): accuracy on true-edge pairs (labels 0 and 1) of a three-class
/// model, predicting by the larger of the class-0 and class-1 probabilities
/// with ties going to class 0.
pub fn direction_accuracy_from_three_class(probs: &Array2<f64>, instances: &[LinkInstance]) -> Result<f64> {
    if probs.nrows() != instances.len() || probs.ncols() < 2 {
        return Err(Error::dims(
            format!("{}x3 probabilities", instances.len()),
            format!("{:?}", probs.dim()),
        ));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (row, inst) in probs.rows().into_iter().zip(instances) {
        if inst.label > 1 {
            continue;
        }
        total += 1;
        let pred = usize::from(row[1] > row[0]);
        correct += usize::from(pred == inst.label);
    }
    if total == 0 {
        return Err(Error::Insufficient("no true-edge pairs to evaluate".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::directed_cycle;

    #[test]
    fn degree_feature_examples() {
        let g = DirectedGraph::new(3, [(0, 1)]).unwrap();
        let x = degree_features(&g);
        assert_eq!(x.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(x.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(x.row(2).to_vec(), vec![0.0, 0.0]);
        let c = degree_features(&directed_cycle(4));
        assert!(c.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn per_class_sizes() {
        let labels: Vec<usize> = (0..500).map(|v| v / 100).collect();
        let a = node_split_per_class(&labels, 20, 100, 1).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (100, 100, 300));
        a.validate(500).unwrap();
        for c in 0..5 {
            assert_eq!(a.train.iter().filter(|&&v| labels[v] == c).count(), 20);
        }
        let b = node_split_per_class(&labels, 20, 100, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!((b.train.len(), b.val.len(), b.test.len()), (100, 100, 300));
        assert!(node_split_per_class(&labels, 101, 0, 1).is_err());
    }

    #[test]
    fn fraction_sizes() {
        let s = node_split_fraction(101, (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (61, 20, 20));
        s.validate(101).unwrap();
        assert_ne!(s, node_split_fraction(101, (0.6, 0.2, 0.2), 4).unwrap());
        assert!(node_split_fraction(3, (0.6, 0.2, 0.2), 3).is_err());
    }

    #[test]
    fn four_cycle_is_degenerate() {
        let g = directed_cycle(4);
        let cfg = LinkSplitConfig::default();
        assert!(matches!(link_split(&g, &cfg), Err(Error::Insufficient(_))));
        let ok = link_split(
            &g,
            &LinkSplitConfig {
                allow_degenerate: true,
                ..cfg
            },
        )
        .unwrap();
        assert!(ok.test_edges.is_empty() && ok.val_edges.is_empty());
    }

    #[test]
    fn task4_tie_break() {
        let probs = Array2::from_shape_vec((2, 3), vec![0.1, 0.1, 0.8, 0.2, 0.2, 0.6]).unwrap();
        let inst = [
            LinkInstance {
                source: 0,
                target: 1,
                label: 0,
            },
            LinkInstance {
                source: 1,
                target: 0,
                label: 1,
            },
        ];
        assert_eq!(direction_accuracy_from_three_class(&probs, &inst).unwrap(), 0.5);
    }
}
