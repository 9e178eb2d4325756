//! Directed graphs and the adjacency-level matrices derived from them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparse::ComplexSparseMatrix;

/// Header directive written by [`write_edge_list`]. When present, vertex ids
/// are taken verbatim instead of being remapped by first appearance.
pub const EDGE_LIST_HEADER: &str = "# magnet-edgelist vertices=";

/// Unweighted directed graph without self-loops or duplicate edges.
///
/// Edges are kept sorted lexicographically, which makes the edge list the
/// canonical representation of the adjacency matrix `A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    /// Duplicate edges are collapsed; self-loops and out-of-range ids are errors.
    pub fn new(num_vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(u, v) in &edges {
            if u >= num_vertices || v >= num_vertices {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) references a vertex outside 0..{num_vertices}"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {u}")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self { num_vertices, edges })
    }

    pub fn empty(num_vertices: usize) -> Self {
        Self {
            num_vertices,
            edges: Vec::new(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u, v)).is_ok()
    }

    /// Both `(u, v)` and `(v, u)` are edges.
    pub fn is_reciprocal(&self, u: usize, v: usize) -> bool {
        self.has_edge(u, v) && self.has_edge(v, u)
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_vertices];
        for &(_, v) in &self.edges {
            d[v] += 1;
        }
        d
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_vertices];
        for &(u, _) in &self.edges {
            d[u] += 1;
        }
        d
    }

    /// Sorted neighbor lists of the underlying undirected graph.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Number of connected components of the underlying undirected graph.
    pub fn undirected_components(&self) -> usize {
        let adj = self.undirected_neighbors();
        let mut seen = vec![false; self.num_vertices];
        let mut count = 0;
        for start in 0..self.num_vertices {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_weakly_connected(&self) -> bool {
        self.num_vertices > 0 && self.undirected_components() == 1
    }

    /// Vertex `u` becomes `perm[u]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_vertices {
            return Err(Error::dims(self.num_vertices, perm.len()));
        }
        Self::new(self.num_vertices, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }

    /// Every edge flipped.
    pub fn reversed(&self) -> Self {
        let mut edges: Vec<_> = self.edges.iter().map(|&(u, v)| (v, u)).collect();
        edges.sort_unstable();
        Self {
            num_vertices: self.num_vertices,
            edges,
        }
    }

    /// Graph on the same vertices keeping only edges accepted by `keep`.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            num_vertices: self.num_vertices,
            edges: self.edges.iter().copied().filter(|&(u, v)| keep(u, v)).collect(),
        }
    }
}

/// Charge parameter `q` of the magnetic Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Charge(f64);

impl Charge {
    pub const MAX_STANDARD: f64 = 0.25;

    /// Accepts `q` in `[0, 0.25]`.
    pub fn new(q: f64) -> Result<Self> {
        if (0.0..=Self::MAX_STANDARD).contains(&q) {
            Ok(Self(q))
        } else {
            Err(Error::ChargeOutOfRange(q))
        }
    }

    /// Accepts any finite `q >= 0`.
    pub fn unrestricted(q: f64) -> Result<Self> {
        if q.is_finite() && q >= 0.0 {
            Ok(Self(q))
        } else {
            Err(Error::InvalidParameter(format!(
                "charge must be finite and >= 0, got {q}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `exp(2 pi i * turns)`, exact whenever `4 * turns` is an integer.
pub fn unit_phase(turns: f64) -> Complex64 {
    let quarters = 4.0 * turns;
    if quarters.fract() == 0.0 && quarters.abs() < 1e15 {
        return match (quarters as i64).rem_euclid(4) {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
    }
    let (s, c) = (2.0 * std::f64::consts::PI * turns).sin_cos();
    Complex64::new(c, s)
}

/// Visits every unordered adjacency `{u, v}` (`u < v`) of the symmetrized
/// graph once, with `A(u,v) - A(v,u)` in `{-1, 0, 1}` and `A_s(u,v)`.
pub(crate) fn for_each_adjacency(g: &DirectedGraph, mut f: impl FnMut(usize, usize, i8, f64)) {
    let mut pairs: Vec<(usize, usize, i8)> = g
        .edges()
        .iter()
        .map(|&(u, v)| if u < v { (u, v, 1) } else { (v, u, -1) })
        .collect();
    pairs.sort_unstable_by_key(|&(u, v, _)| (u, v));
    let mut i = 0;
    while i < pairs.len() {
        let (u, v, d) = pairs[i];
        if i + 1 < pairs.len() && pairs[i + 1].0 == u && pairs[i + 1].1 == v {
            f(u, v, 0, 1.0);
            i += 2;
        } else {
            f(u, v, d, 0.5);
            i += 1;
        }
    }
}

/// `A_s = (A + A^T) / 2`. Entries are `1` on reciprocal pairs and `1/2` on
/// one-way edges.
pub fn symmetrized_adjacency(g: &DirectedGraph) -> ComplexSparseMatrix {
    let mut trip = Vec::with_capacity(2 * g.num_edges());
    for_each_adjacency(g, |u, v, _, w| {
        trip.push((u, v, Complex64::new(w, 0.0)));
        trip.push((v, u, Complex64::new(w, 0.0)));
    });
    ComplexSparseMatrix::from_triplets(g.num_vertices(), g.num_vertices(), trip, true)
        .expect("symmetrized adjacency is symmetric by construction")
}

/// Row sums of a (real, symmetric) adjacency matrix.
pub fn degrees(a_s: &ComplexSparseMatrix) -> Vec<f64> {
    (0..a_s.rows()).map(|r| a_s.row(r).map(|(_, v)| v.re).sum()).collect()
}

/// `D_s = diag(row sums of A_s)`.
pub fn degree_matrix(a_s: &ComplexSparseMatrix) -> ComplexSparseMatrix {
    ComplexSparseMatrix::diagonal(&degrees(a_s))
}

/// `Theta(u,v) = 2 pi q (A(u,v) - A(v,u))`, stored as a real sparse matrix.
/// Reciprocal pairs and non-edges are structurally zero.
pub fn phase_matrix(g: &DirectedGraph, q: Charge) -> ComplexSparseMatrix {
    let angle = 2.0 * std::f64::consts::PI * q.value();
    let mut trip = Vec::new();
    for_each_adjacency(g, |u, v, d, _| {
        if d != 0 {
            let t = angle * f64::from(d);
            trip.push((u, v, Complex64::new(t, 0.0)));
            trip.push((v, u, Complex64::new(-t, 0.0)));
        }
    });
    ComplexSparseMatrix::from_triplets(g.num_vertices(), g.num_vertices(), trip, false)
        .expect("indices come from a valid graph")
}

/// `H = A_s ⊙ exp(i Theta)`. The `(v, u)` entry is written as the exact
/// conjugate of the `(u, v)` entry.
pub fn hermitian_adjacency(g: &DirectedGraph, q: Charge) -> ComplexSparseMatrix {
    let mut trip = Vec::with_capacity(2 * g.num_edges());
    for_each_adjacency(g, |u, v, d, w| {
        let z = unit_phase(q.value() * f64::from(d)) * w;
        trip.push((u, v, z));
        trip.push((v, u, z.conj()));
    });
    ComplexSparseMatrix::from_triplets(g.num_vertices(), g.num_vertices(), trip, true)
        .expect("hermitian by construction")
}

/// Result of reading an edge-list file.
#[derive(Debug, Clone)]
pub struct EdgeListLoad {
    pub graph: DirectedGraph,
    /// `original_ids[k]` is the file id of vertex `k`.
    pub original_ids: Vec<u64>,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<EdgeListLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, path)
}

/// Parses `src<TAB>dst` lines. `#` lines are comments, blank lines are
/// skipped. Ids are remapped to `0..N` in order of first appearance unless the
/// [`EDGE_LIST_HEADER`] directive fixes `N`.
pub fn parse_edge_list(text: &str, path: &Path) -> Result<EdgeListLoad> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut declared: Option<usize> = None;
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let mut original_ids = Vec::new();
    let mut edges = Vec::new();
    let mut self_loops = 0;
    let mut any_line = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix(EDGE_LIST_HEADER) {
            let n = rest
                .trim()
                .parse::<usize>()
                .map_err(|e| err(lineno, format!("bad vertex count: {e}")))?;
            declared = Some(n);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        any_line = true;
        let mut fields = line.split('\t');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(lineno, format!("expected `src<TAB>dst`, found {line:?}")));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| err(lineno, format!("bad vertex id {s:?}: {e}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        let (u, v) = match declared {
            Some(n) => {
                for id in [a, b] {
                    if id as usize >= n {
                        return Err(err(lineno, format!("vertex {id} outside declared 0..{n}")));
                    }
                }
                (a as usize, b as usize)
            }
            None => {
                let mut intern = |id: u64| {
                    *ids.entry(id).or_insert_with(|| {
                        original_ids.push(id);
                        original_ids.len() - 1
                    })
                };
                (intern(a), intern(b))
            }
        };
        if u == v {
            self_loops += 1;
            continue;
        }
        edges.push((u, v));
    }

    if !any_line {
        return Err(Error::EmptyEdgeList(PathBuf::from(path)));
    }
    if self_loops > 0 {
        log::warn!("{}: dropped {self_loops} self-loop(s)", path.display());
    }
    let num_vertices = match declared {
        Some(n) => {
            original_ids = (0..n as u64).collect();
            n
        }
        None => original_ids.len(),
    };
    let raw_count = edges.len();
    let graph = DirectedGraph::new(num_vertices, edges)?;
    Ok(EdgeListLoad {
        duplicates_dropped: raw_count - graph.num_edges(),
        graph,
        original_ids,
        self_loops_dropped: self_loops,
    })
}

/// Canonical text form: the vertex-count header followed by sorted edges.
pub fn edge_list_string(g: &DirectedGraph) -> String {
    let mut out = format!("{EDGE_LIST_HEADER}{}\n", g.num_vertices());
    for &(u, v) in g.edges() {
        let _ = writeln!(out, "{u}\t{v}");
    }
    out
}

pub fn write_edge_list(g: &DirectedGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, edge_list_string(g))?;
    Ok(())
}

/// In-star on `n` vertices: every leaf `1..n` points at vertex 0.
pub fn in_star(n: usize) -> DirectedGraph {
    DirectedGraph::new(n, (1..n).map(|j| (j, 0))).expect("valid star")
}

/// Out-star on `n` vertices: vertex 0 points at every leaf.
pub fn out_star(n: usize) -> DirectedGraph {
    DirectedGraph::new(n, (1..n).map(|j| (0, j))).expect("valid star")
}

/// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
pub fn directed_cycle(n: usize) -> DirectedGraph {
    DirectedGraph::new(n, (0..n).map(|j| (j, (j + 1) % n))).expect("valid cycle")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn parse(text: &str) -> Result<EdgeListLoad> {
        parse_edge_list(text, Path::new("test.tsv"))
    }

    #[test]
    fn reads_simple_file() {
        let load = parse("0\t1\n1\t2").unwrap();
        assert_eq!(load.graph.num_vertices(), 3);
        assert_eq!(load.graph.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn drops_self_loops_with_count() {
        let load = parse("0\t1\n3\t3\n").unwrap();
        assert_eq!(load.self_loops_dropped, 1);
        assert_eq!(load.graph.num_edges(), 1);
    }

    #[test]
    fn remaps_ids_by_first_appearance() {
        let load = parse("# comment\n9\t5\n12\t9\n9\t5\n").unwrap();
        assert_eq!(load.graph.num_vertices(), 3);
        assert_eq!(load.original_ids, vec![9, 5, 12]);
        assert_eq!(load.graph.edges(), &[(0, 1), (2, 0)]);
        assert_eq!(load.duplicates_dropped, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("0\t1\n1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("# only comments\n"), Err(Error::EmptyEdgeList(_))));
    }

    #[test]
    fn header_keeps_isolated_vertices() {
        let g = DirectedGraph::new(5, [(3, 1), (0, 4)]).unwrap();
        let load = parse(&edge_list_string(&g)).unwrap();
        assert_eq!(load.graph, g);
    }

    #[test]
    fn symmetrized_weights() {
        let one_way = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let a = symmetrized_adjacency(&one_way);
        assert_eq!(a.get(0, 1), c(0.5, 0.0));
        assert_eq!(a.get(1, 0), c(0.5, 0.0));
        let both = DirectedGraph::new(2, [(0, 1), (1, 0)]).unwrap();
        let a = symmetrized_adjacency(&both);
        assert_eq!(a.get(0, 1), c(1.0, 0.0));
        assert_eq!(symmetrized_adjacency(&DirectedGraph::empty(3)).nnz(), 0);
    }

    #[test]
    fn degree_examples() {
        let d = degree_matrix(&symmetrized_adjacency(&DirectedGraph::new(2, [(0, 1)]).unwrap()));
        assert_eq!(d.get(0, 0), c(0.5, 0.0));
        assert_eq!(d.get(1, 1), c(0.5, 0.0));
        let d = degrees(&symmetrized_adjacency(&in_star(4)));
        assert_eq!(d, vec![1.5, 0.5, 0.5, 0.5]);
        assert!(degrees(&symmetrized_adjacency(&DirectedGraph::empty(2)))
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn phase_examples() {
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let th = phase_matrix(&g, Charge::new(0.25).unwrap());
        assert_eq!(th.get(0, 1).re, std::f64::consts::FRAC_PI_2);
        assert_eq!(th.get(1, 0).re, -std::f64::consts::FRAC_PI_2);
        assert_eq!(phase_matrix(&g, Charge::new(0.0).unwrap()).nnz(), 0);
        let both = DirectedGraph::new(2, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(phase_matrix(&both, Charge::new(0.2).unwrap()).nnz(), 0);
    }

    #[test]
    fn hermitian_adjacency_examples() {
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let h = hermitian_adjacency(&g, Charge::new(0.25).unwrap());
        assert_eq!(h.get(0, 1), c(0.0, 0.5));
        assert_eq!(h.get(1, 0), c(0.0, -0.5));
        let both = DirectedGraph::new(2, [(0, 1), (1, 0)]).unwrap();
        let h = hermitian_adjacency(&both, Charge::new(0.1).unwrap());
        assert_eq!(h.get(0, 1), c(1.0, 0.0));
        assert_eq!(h.get(1, 0), c(1.0, 0.0));
    }

    #[test]
    fn charge_range() {
        assert!(Charge::new(0.3).is_err());
        assert!(Charge::new(-0.1).is_err());
        assert!(Charge::unrestricted(0.3).is_ok());
        assert!(Charge::unrestricted(f64::NAN).is_err());
    }

    #[test]
    fn constructor_rejects_bad_edges() {
        assert!(DirectedGraph::new(2, [(1, 1)]).is_err());
        assert!(DirectedGraph::new(2, [(0, 2)]).is_err());
        assert_eq!(DirectedGraph::new(2, [(0, 1), (0, 1)]).unwrap().num_edges(), 1);
    }

    #[test]
    fn exact_unit_phases() {
        assert_eq!(unit_phase(0.25), c(0.0, 1.0));
        assert_eq!(unit_phase(-0.25), c(0.0, -1.0));
        assert_eq!(unit_phase(0.5), c(-1.0, 0.0));
        let z = unit_phase(0.1);
        assert!((z.norm() - 1.0).abs() < 1e-15);
    }
}
