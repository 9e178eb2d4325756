//! Magnetic Laplacians, their eigenstructure, and spectral filtering.
//!
//! For a directed graph with symmetrized adjacency `A_s`, degrees `D_s` and
//! phases `Theta = 2 pi q (A - A^T)`:
//!
//! ```text
//! L_U = D_s - A_s ⊙ exp(i Theta)
//! L_N = I - (D_s^-1/2 A_s D_s^-1/2) ⊙ exp(i Theta)
//! ```
//!
//! Both are Hermitian and positive semidefinite, and the spectrum of `L_N`
//! lies in `[0, 2]`. The dense eigensolver here exists for oracles and
//! analysis; the learning path only ever applies Chebyshev polynomials of the
//! scaled operator through the three-term recurrence.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::ComplexFeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{self, Charge, DirectedGraph};
use crate::rng::{stream_rng, Stream};
use crate::sparse::ComplexSparseMatrix;

/// Default cap on `N` for the dense eigensolver.
pub const DENSE_EIGEN_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Unnormalized,
    Normalized,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Unnormalized => "unnormalized",
            Normalization::Normalized => "normalized",
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unnormalized" => Ok(Normalization::Unnormalized),
            "normalized" => Ok(Normalization::Normalized),
            other => Err(Error::InvalidParameter(format!("unknown normalization {other:?}"))),
        }
    }
}

/// How the normalized Laplacian treats vertices of zero degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IsolatedPolicy {
    /// Refuse: `D_s^-1/2` does not exist.
    #[default]
    Error,
    /// Take `D_s^-1/2 = 0` there, which leaves `L(v,v) = 1` and an isolated
    /// eigenvalue of 1.
    UnitDiagonal,
}

/// A magnetic Laplacian together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticLaplacian {
    q: f64,
    normalization: Normalization,
    matrix: ComplexSparseMatrix,
}

impl MagneticLaplacian {
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn matrix(&self) -> &ComplexSparseMatrix {
        &self.matrix
    }

    pub fn num_vertices(&self) -> usize {
        self.matrix.rows()
    }

    /// Wraps an existing Hermitian matrix, e.g. one read back from disk.
    pub fn from_matrix(q: f64, normalization: Normalization, matrix: ComplexSparseMatrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() || !matrix.is_exactly_hermitian() {
            return Err(Error::InvalidParameter(
                "laplacian matrix must be square and hermitian".into(),
            ));
        }
        Ok(Self {
            q,
            normalization,
            matrix: ComplexSparseMatrix::from_triplets(matrix.rows(), matrix.cols(), matrix.iter(), true)?,
        })
    }
}

pub fn build_laplacian(g: &DirectedGraph, q: Charge, normalization: Normalization) -> Result<MagneticLaplacian> {
    build_laplacian_with(g, q, normalization, IsolatedPolicy::Error)
}

pub fn build_laplacian_with(
    g: &DirectedGraph,
    q: Charge,
    normalization: Normalization,
    isolated: IsolatedPolicy,
) -> Result<MagneticLaplacian> {
    let n = g.num_vertices();
    let deg = graph::degrees(&graph::symmetrized_adjacency(g));
    let mut trip = Vec::with_capacity(2 * g.num_edges() + n);
    match normalization {
        Normalization::Unnormalized => {
            for (v, &d) in deg.iter().enumerate() {
                trip.push((v, v, Complex64::new(d, 0.0)));
            }
            graph::for_each_adjacency(g, |u, v, dir, w| {
                let z = -(graph::unit_phase(q.value() * f64::from(dir)) * w);
                trip.push((u, v, z));
                trip.push((v, u, z.conj()));
            });
        }
        Normalization::Normalized => {
            let mut inv_sqrt = Vec::with_capacity(n);
            for (v, &d) in deg.iter().enumerate() {
                if d > 0.0 {
                    inv_sqrt.push(1.0 / d.sqrt());
                } else if isolated == IsolatedPolicy::Error {
                    return Err(Error::IsolatedVertex(v));
                } else {
                    inv_sqrt.push(0.0);
                }
                trip.push((v, v, Complex64::new(1.0, 0.0)));
            }
            graph::for_each_adjacency(g, |u, v, dir, w| {
                let scale = w * (inv_sqrt[u] * inv_sqrt[v]);
                let z = -(graph::unit_phase(q.value() * f64::from(dir)) * scale);
                trip.push((u, v, z));
                trip.push((v, u, z.conj()));
            });
        }
    }
    let matrix = ComplexSparseMatrix::from_triplets(n, n, trip, true)?;
    if matrix.iter().any(|(_, _, z)| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite laplacian entry".into()));
    }
    Ok(MagneticLaplacian {
        q: q.value(),
        normalization,
        matrix,
    })
}

/// Classical Laplacian `D - A` or `I - D^-1/2 A D^-1/2` of a real symmetric
/// adjacency matrix. Independent of the magnetic construction; `q = 0` must
/// reproduce it.
pub fn classical_laplacian(a_s: &ComplexSparseMatrix, normalization: Normalization) -> Result<ComplexSparseMatrix> {
    let n = a_s.rows();
    let deg = graph::degrees(a_s);
    let mut trip: Vec<(usize, usize, Complex64)> = Vec::with_capacity(a_s.nnz() + n);
    match normalization {
        Normalization::Unnormalized => {
            trip.extend(deg.iter().enumerate().map(|(v, &d)| (v, v, Complex64::new(d, 0.0))));
            trip.extend(a_s.iter().map(|(r, c, v)| (r, c, -v)));
        }
        Normalization::Normalized => {
            for (v, &d) in deg.iter().enumerate() {
                if d <= 0.0 {
                    return Err(Error::IsolatedVertex(v));
                }
                trip.push((v, v, Complex64::new(1.0, 0.0)));
            }
            trip.extend(
                a_s.iter()
                    .map(|(r, c, v)| (r, c, Complex64::new(-v.re / (deg[r] * deg[c]).sqrt(), 0.0))),
            );
        }
    }
    ComplexSparseMatrix::from_triplets(n, n, trip, true)
}

/// `x^† L x`.
pub fn quadratic_form(l: &MagneticLaplacian, x: &[Complex64]) -> Result<Complex64> {
    let lx = l.matrix.mul_vec(x)?;
    Ok(x.iter().zip(&lx).map(|(a, b)| a.conj() * b).sum())
}

/// Full eigendecomposition `L = U diag(lambda) U^†`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: DMatrix<Complex64>,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvector(&self, k: usize) -> Vec<Complex64> {
        self.eigenvectors.column(k).iter().copied().collect()
    }
}

pub fn eigendecompose(l: &MagneticLaplacian) -> Result<EigenDecomposition> {
    eigendecompose_hermitian(&l.matrix, DENSE_EIGEN_CAP)
}

/// Dense Hermitian eigensolve of any Hermitian sparse matrix up to `cap` rows.
///
/// Each eigenvector is rotated so its first component of modulus above
/// `1e-8` is real positive. Eigenvalues within `1e-9` of each other are
/// ordered lexicographically by their canonical eigenvectors.
pub fn eigendecompose_hermitian(m: &ComplexSparseMatrix, cap: usize) -> Result<EigenDecomposition> {
    let n = m.rows();
    if n > cap {
        return Err(Error::TooLargeForDense { n, cap });
    }
    if m.rows() != m.cols() {
        return Err(Error::dims("square matrix", format!("{}x{}", m.rows(), m.cols())));
    }
    let eig = nalgebra::SymmetricEigen::new(m.to_dense());
    let mut pairs: Vec<(f64, Vec<Complex64>)> = (0..n)
        .map(|k| {
            let mut v: Vec<Complex64> = eig.eigenvectors.column(k).iter().copied().collect();
            canonical_phase(&mut v);
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].0 - pairs[start].0 <= 1e-9 {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lex_cmp(&a.1, &b.1));
        start = end;
    }
    let eigenvalues = pairs.iter().map(|p| p.0).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| pairs[c].1[r]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn canonical_phase(v: &mut [Complex64]) {
    if let Some(lead) = v.iter().find(|z| z.norm() > 1e-8).copied() {
        let rot = lead.conj() / lead.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

fn lex_cmp(a: &[Complex64], b: &[Complex64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarDirection {
    /// Leaves point at the center.
    In,
    /// The center points at the leaves.
    Out,
}

/// Closed-form spectrum of the unnormalized magnetic Laplacian of a star.
#[derive(Debug, Clone)]
pub struct StarSpectrum {
    /// `0`, then `1/2` with multiplicity `n - 2`, then `n / 2`.
    pub eigenvalues: Vec<f64>,
    /// Kernel vector, unnormalized.
    pub lead: Vec<Complex64>,
    /// Eigenvector of `n / 2`, unnormalized.
    pub last: Vec<Complex64>,
}

/// Star spectrum with vertex 0 as the center (see [`graph::in_star`] and
/// [`graph::out_star`]).
///
/// With `Theta(u,v) = 2 pi q (A(u,v) - A(v,u))`, the out-star kernel vector
/// carries phase `exp(2 pi i q)` at the center; the in-star Laplacian is the
/// entrywise conjugate, so its eigenvectors are the conjugates.
pub fn star_spectrum_oracle(n: usize, q: f64, direction: StarDirection) -> Result<StarSpectrum> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("star needs n >= 2, got {n}")));
    }
    let mut eigenvalues = vec![0.0];
    eigenvalues.extend(std::iter::repeat_n(0.5, n - 2));
    eigenvalues.push(n as f64 / 2.0);
    let center = match direction {
        StarDirection::Out => graph::unit_phase(q),
        StarDirection::In => graph::unit_phase(-q),
    };
    let leaf = Complex64::new(1.0, 0.0);
    let mut lead = vec![leaf; n];
    lead[0] = center;
    let mut last = vec![Complex64::new(1.0 / (n as f64 - 1.0), 0.0); n];
    last[0] = -center;
    Ok(StarSpectrum {
        eigenvalues,
        lead,
        last,
    })
}

/// Closed-form spectrum of the directed cycle `0 -> 1 -> ... -> n-1 -> 0`:
/// `lambda_k = 1 - cos(2 pi (k/n + q))` with unit Fourier eigenvectors
/// `u_k(m) = exp(2 pi i k m / n) / sqrt(n)`, `k = 1..=n`.
///
/// The normalized and unnormalized Laplacians coincide on the cycle.
pub fn cycle_spectrum_oracle(n: usize, q: f64) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("cycle needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let eigenvalues = (1..=n)
        .map(|k| 1.0 - (2.0 * std::f64::consts::PI * (k as f64 / nf + q)).cos())
        .collect();
    let norm = 1.0 / nf.sqrt();
    let vectors = DMatrix::from_fn(n, n, |m, c| {
        let k = (c + 1) % n;
        graph::unit_phase(((k * m) % n) as f64 / nf) * norm
    });
    Ok((eigenvalues, vectors))
}

/// `x_hat = U^† x`.
pub fn fourier_transform(decomp: &EigenDecomposition, x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.len() != decomp.len() {
        return Err(Error::dims(decomp.len(), x.len()));
    }
    let x = DVector::from_column_slice(x);
    Ok(decomp.eigenvectors.ad_mul(&x).iter().copied().collect())
}

/// `x = U x_hat`.
pub fn inverse_fourier(decomp: &EigenDecomposition, xhat: &[Complex64]) -> Result<Vec<Complex64>> {
    if xhat.len() != decomp.len() {
        return Err(Error::dims(decomp.len(), xhat.len()));
    }
    let xhat = DVector::from_column_slice(xhat);
    Ok((&decomp.eigenvectors * xhat).iter().copied().collect())
}

/// `Y = U diag(sigma) U^†`.
pub fn spectral_conv_matrix(decomp: &EigenDecomposition, sigma: &[f64]) -> Result<DMatrix<Complex64>> {
    if sigma.len() != decomp.len() {
        return Err(Error::dims(decomp.len(), sigma.len()));
    }
    let u = &decomp.eigenvectors;
    let mut scaled = u.clone();
    for (k, &s) in sigma.iter().enumerate() {
        scaled.column_mut(k).scale_mut(s);
    }
    Ok(scaled * u.adjoint())
}

/// `(2 / lambda_max) L - I`.
pub fn scaled_laplacian(l: &MagneticLaplacian, lambda_max: f64) -> Result<ComplexSparseMatrix> {
    scale_operator(&l.matrix, lambda_max)
}

pub(crate) fn scale_operator(m: &ComplexSparseMatrix, lambda_max: f64) -> Result<ComplexSparseMatrix> {
    if lambda_max.is_nan() || lambda_max <= 0.0 || !lambda_max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    Ok(m.scale_shift(2.0 / lambda_max, -1.0))
}

/// Coefficients `theta_0..=theta_K` of a Chebyshev filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebCoefficients {
    theta: Vec<f64>,
}

impl ChebCoefficients {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidParameter(
                "a Chebyshev filter needs at least theta_0".into(),
            ));
        }
        Ok(Self { theta })
    }

    pub fn order(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `sum_k theta_k T_k(x)` for scalar `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let (mut t_prev, mut t_cur) = (1.0, x);
        let mut acc = self.theta[0];
        for (k, &th) in self.theta.iter().enumerate().skip(1) {
            if k > 1 {
                let next = 2.0 * x * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = next;
            }
            acc += th * t_cur;
        }
        acc
    }
}

/// Chebyshev polynomials `T_0(L~) x, ..., T_K(L~) x` by the recurrence
/// `T_k = 2 L~ T_(k-1) - T_(k-2)`.
pub fn chebyshev_basis(
    l_scaled: &ComplexSparseMatrix,
    x: &ComplexFeatureMatrix,
    order: usize,
) -> Result<Vec<ComplexFeatureMatrix>> {
    let mut basis = Vec::with_capacity(order + 1);
    basis.push(x.clone());
    if order >= 1 {
        basis.push(l_scaled.apply(x)?);
    }
    for k in 2..=order {
        let lt = l_scaled.apply(&basis[k - 1])?;
        basis.push(ComplexFeatureMatrix::lincomb(2.0, &lt, &basis[k - 2]));
    }
    Ok(basis)
}

/// `sum_k theta_k T_k(L~) x` without materializing any `T_k(L~)`.
pub fn cheb_filter_apply(
    l_scaled: &ComplexSparseMatrix,
    coeffs: &ChebCoefficients,
    x: &ComplexFeatureMatrix,
) -> Result<ComplexFeatureMatrix> {
    let basis = chebyshev_basis(l_scaled, x, coeffs.order())?;
    let mut out = ComplexFeatureMatrix::zeros(x.rows(), x.cols());
    for (t, &th) in basis.iter().zip(coeffs.theta()) {
        out.axpy(th, t);
    }
    Ok(out)
}

/// `D~^-1/2 A~_s D~^-1/2 ⊙ exp(i Theta)` with `A~_s = A_s + I`.
pub fn renormalized_propagation(g: &DirectedGraph, q: Charge) -> ComplexSparseMatrix {
    let n = g.num_vertices();
    let deg: Vec<f64> = graph::degrees(&graph::symmetrized_adjacency(g))
        .into_iter()
        .map(|d| d + 1.0)
        .collect();
    let mut trip: Vec<(usize, usize, Complex64)> = (0..n).map(|v| (v, v, Complex64::new(1.0 / deg[v], 0.0))).collect();
    graph::for_each_adjacency(g, |u, v, dir, w| {
        let z = graph::unit_phase(q.value() * f64::from(dir)) * (w / (deg[u] * deg[v]).sqrt());
        trip.push((u, v, z));
        trip.push((v, u, z.conj()));
    });
    ComplexSparseMatrix::from_triplets(n, n, trip, true).expect("hermitian by construction")
}

/// Power iteration on a positive semidefinite Hermitian operator. Stops
/// once the eigen-residual `|Lx - rho x|` drops below `tol * rho`.
pub fn lambda_max_estimate(l: &MagneticLaplacian, tol: f64) -> Result<f64> {
    power_iteration(&l.matrix, tol, 100_000)
}

pub fn power_iteration(m: &ComplexSparseMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let n = m.rows();
    if n == 0 || m.nnz() == 0 {
        return Ok(0.0);
    }
    let mut rng = stream_rng(0x5eed, Stream::INIT);
    let mut x: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen::<f64>() + 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    normalize(&mut x);
    let mut rho = 0.0;
    for _ in 0..max_iter {
        let y = m.mul_vec(&x)?;
        rho = x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        let resid = y
            .iter()
            .zip(&x)
            .map(|(b, a)| (b - a * rho).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if resid <= tol * rho.abs() || resid == 0.0 {
            return Ok(rho);
        }
        x = y;
        if normalize(&mut x) == 0.0 {
            return Ok(0.0);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        estimate: rho,
    })
}

fn normalize(x: &mut [Complex64]) -> f64 {
    let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in x.iter_mut() {
            *z /= norm;
        }
    }
    norm
}

/// Textual triplet export: a `N q normalization` header, then one
/// `row col real imag` line per stored entry at 17 significant digits.
pub fn laplacian_to_string(l: &MagneticLaplacian) -> String {
    let mut out = format!("{} {} {}\n", l.num_vertices(), l.q, l.normalization.as_str());
    for (r, c, z) in l.matrix.iter() {
        let _ = writeln!(out, "{r} {c} {:.16e} {:.16e}", z.re, z.im);
    }
    out
}

pub fn laplacian_from_str(text: &str) -> Result<MagneticLaplacian> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: "<laplacian>".into(),
        line,
        message: msg.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [n, q, norm] = fields[..] else {
        return Err(bad(1, "header must be `N q normalization`"));
    };
    let n: usize = n.parse().map_err(|_| bad(1, "bad N"))?;
    let q: f64 = q.parse().map_err(|_| bad(1, "bad q"))?;
    let norm: Normalization = norm.parse()?;
    let mut trip = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [r, c, re, im] = f[..] else {
            return Err(bad(i + 2, "expected `row col real imag`"));
        };
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
        let parse_u = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 2, "bad index"));
        trip.push((parse_u(r)?, parse_u(c)?, Complex64::new(parse_f(re)?, parse_f(im)?)));
    }
    let matrix = ComplexSparseMatrix::from_triplets(n, n, trip, true)?;
    Ok(MagneticLaplacian {
        q,
        normalization: norm,
        matrix,
    })
}

pub fn write_laplacian(l: &MagneticLaplacian, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, laplacian_to_string(l))?;
    Ok(())
}

pub fn read_laplacian(path: impl AsRef<Path>) -> Result<MagneticLaplacian> {
    laplacian_from_str(&std::fs::read_to_string(path)?)
}
