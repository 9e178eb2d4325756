//! Dense complex feature matrices stored as separate real and imaginary planes.

use nalgebra::DMatrix;
use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// An `N x F` complex matrix. Row `u` holds the features of vertex `u`.
///
/// The real and imaginary parts live in two equally shaped row-major
/// arrays; every constructor checks that they agree.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFeatureMatrix {
    re: Array2<f64>,
    im: Array2<f64>,
}

impl ComplexFeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Array2::zeros((rows, cols)),
            im: Array2::zeros((rows, cols)),
        }
    }

    pub fn from_parts(re: Array2<f64>, im: Array2<f64>) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::dims(format!("{:?}", re.dim()), format!("{:?}", im.dim())));
        }
        Ok(Self {
            re: re.as_standard_layout().into_owned(),
            im: im.as_standard_layout().into_owned(),
        })
    }

    /// Lifts a real matrix to complex with zero imaginary part.
    pub fn from_real(re: Array2<f64>) -> Self {
        let im = Array2::zeros(re.dim());
        Self {
            re: re.as_standard_layout().into_owned(),
            im,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let z = f(r, c);
                out.re[[r, c]] = z.re;
                out.im[[r, c]] = z.im;
            }
        }
        out
    }

    /// Single-column matrix from a complex vector.
    pub fn from_column(values: &[Complex64]) -> Self {
        Self::from_fn(values.len(), 1, |r, _| values[r])
    }

    pub fn rows(&self) -> usize {
        self.re.nrows()
    }

    pub fn cols(&self) -> usize {
        self.re.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.re.dim()
    }

    pub fn re(&self) -> &Array2<f64> {
        &self.re
    }

    pub fn im(&self) -> &Array2<f64> {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut Array2<f64> {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut Array2<f64> {
        &mut self.im
    }

    pub fn planes_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.re, &mut self.im)
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.re, self.im)
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        Complex64::new(self.re[[r, c]], self.im[[r, c]])
    }

    pub fn set(&mut self, r: usize, c: usize, z: Complex64) {
        self.re[[r, c]] = z.re;
        self.im[[r, c]] = z.im;
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    /// `self += alpha * other` for real `alpha`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        self.re.scaled_add(alpha, &other.re);
        self.im.scaled_add(alpha, &other.im);
    }

    /// `a * x - y`, the shape of a Chebyshev recurrence step.
    pub fn lincomb(a: f64, x: &Self, y: &Self) -> Self {
        let mut re = Array2::zeros(x.dim());
        let mut im = Array2::zeros(x.dim());
        Zip::from(&mut re)
            .and(&x.re)
            .and(&y.re)
            .for_each(|o, &p, &q| *o = a * p - q);
        Zip::from(&mut im)
            .and(&x.im)
            .and(&y.im)
            .for_each(|o, &p, &q| *o = a * p - q);
        Self { re, im }
    }

    /// Rows reordered so that row `perm[u]` of the output is row `u` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows(), self.cols());
        for (u, &pu) in perm.iter().enumerate() {
            out.re.row_mut(pu).assign(&self.re.row(u));
            out.im.row_mut(pu).assign(&self.im.row(u));
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                worst = worst.max((self.get(r, c) - other.get(r, c)).norm());
            }
        }
        worst
    }

    pub fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows(), self.cols(), |r, c| self.get(r, c))
    }

    pub fn from_nalgebra(m: &DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }
}
