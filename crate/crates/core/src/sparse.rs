//! Compressed-sparse-row complex matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dense::ComplexFeatureMatrix;
use crate::error::{Error, Result};

/// Entries with modulus at or below this are never stored.
pub const ZERO_TOL: f64 = 1e-15;

/// Sparse complex matrix in CSR form with sorted column indices.
///
/// Storage is canonical: for a given set of nonzero entries there is exactly
/// one representation, so `==` compares matrices entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
    hermitian: bool,
}

impl ComplexSparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate positions
    /// are summed. When `hermitian` is set the result must satisfy
    /// `M(u,v) == conj(M(v,u))` exactly.
    pub fn from_triplets<I>(rows: usize, cols: usize, triplets: I, hermitian: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Complex64)>,
    {
        let entries: Vec<((usize, usize), Complex64)> = triplets.into_iter().map(|(r, c, v)| ((r, c), v)).collect();
        if let Some(&((r, c), _)) = entries.iter().find(|&&((r, c), _)| r >= rows || c >= cols) {
            return Err(Error::InvalidParameter(format!(
                "entry ({r}, {c}) outside {rows}x{cols} matrix"
            )));
        }
        let m = Self::from_entries(rows, cols, entries, hermitian);
        if hermitian && !m.is_exactly_hermitian() {
            return Err(Error::InvalidParameter(
                "matrix flagged hermitian is not conjugate-symmetric".into(),
            ));
        }
        Ok(m)
    }

    /// Sorts entries by position and sums duplicates in input order.
    fn from_entries(rows: usize, cols: usize, mut entries: Vec<((usize, usize), Complex64)>, hermitian: bool) -> Self {
        entries.sort_by_key(|&(pos, _)| pos);
        let mut merged: Vec<((usize, usize), Complex64)> = Vec::with_capacity(entries.len());
        for (pos, v) in entries {
            match merged.last_mut() {
                Some((p, sum)) if *p == pos => *sum += v,
                _ => merged.push((pos, v)),
            }
        }
        let entries = merged;
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for ((r, c), v) in entries {
            if v.norm() <= ZERO_TOL {
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            hermitian,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            hermitian: rows == cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![Complex64::new(1.0, 0.0); n],
            hermitian: true,
        }
    }

    /// Diagonal matrix with real entries.
    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let entries = diag
            .iter()
            .enumerate()
            .map(|(i, &d)| ((i, i), Complex64::new(d, 0.0)))
            .collect();
        Self::from_entries(n, n, entries, true)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    /// Entrywise check of `M(u,v) == conj(M(v,u))`, no tolerance.
    pub fn is_exactly_hermitian(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(r, c, v)| self.get(c, r) == v.conj())
    }

    /// Largest `|M(u,v) - conj(M(v,u))|` over all stored positions.
    pub fn hermitian_defect(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        self.iter()
            .map(|(r, c, v)| (self.get(c, r) - v.conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        if self.hermitian {
            return self.clone();
        }
        let entries = self.iter().map(|(r, c, v)| ((c, r), v.conj())).collect();
        Self::from_entries(self.cols, self.rows, entries, false)
    }

    /// `alpha * self + beta * I`.
    pub fn scale_shift(&self, alpha: f64, beta: f64) -> Self {
        let mut entries: Vec<((usize, usize), Complex64)> = self.iter().map(|(r, c, v)| ((r, c), v * alpha)).collect();
        for i in 0..self.rows.min(self.cols) {
            entries.push(((i, i), Complex64::new(beta, 0.0)));
        }
        Self::from_entries(self.rows, self.cols, entries, self.hermitian)
    }

    /// Applies `f` to every stored value. The Hermitian flag is dropped
    /// unless `keeps_hermitian` is asserted by the caller.
    pub fn map_values(&self, keeps_hermitian: bool, f: impl Fn(usize, usize, Complex64) -> Complex64) -> Self {
        let entries = self.iter().map(|(r, c, v)| ((r, c), f(r, c, v))).collect();
        Self::from_entries(self.rows, self.cols, entries, keeps_hermitian && self.hermitian)
    }

    /// Relabels vertices: entry `(u, v)` moves to `(perm[u], perm[v])`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let entries = self.iter().map(|(r, c, v)| ((perm[r], perm[c]), v)).collect();
        Self::from_entries(self.rows, self.cols, entries, self.hermitian)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(Error::dims(self.cols, x.len()));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    /// Sparse times dense: `self * x`.
    pub fn apply(&self, x: &ComplexFeatureMatrix) -> Result<ComplexFeatureMatrix> {
        if x.rows() != self.cols {
            return Err(Error::dims(
                format!("{} feature rows", self.cols),
                format!("{} rows", x.rows()),
            ));
        }
        let f = x.cols();
        let mut out = ComplexFeatureMatrix::zeros(self.rows, f);
        let xr = x.re().as_slice().expect("standard layout");
        let xi = x.im().as_slice().expect("standard layout");
        let (out_re, out_im) = out.planes_mut();
        let out_re = out_re.as_slice_mut().expect("standard layout");
        let out_im = out_im.as_slice_mut().expect("standard layout");
        for r in 0..self.rows {
            let yr = &mut out_re[r * f..(r + 1) * f];
            let yi = &mut out_im[r * f..(r + 1) * f];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let a = self.values[k];
                let sr = &xr[c * f..(c + 1) * f];
                let si = &xi[c * f..(c + 1) * f];
                for j in 0..f {
                    yr[j] += a.re * sr[j] - a.im * si[j];
                    yi[j] += a.re * si[j] + a.im * sr[j];
                }
            }
        }
        Ok(out)
    }
}
