//! Spectral learning on directed graphs with the magnetic Laplacian.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`] and [`sparse`]: directed graphs and the complex Hermitian
//!   matrices derived from them;
//! - [`spectral`]: magnetic Laplacians, eigendecomposition, graph Fourier
//!   transforms and Chebyshev filtering;
//! - [`autodiff`]: the small reverse-mode engine the network trains with;
//! - [`model`]: the MagNet network for node classification and link prediction;
//! - [`dsbm`]: the directed stochastic block model generator;
//! - [`data`]: feature construction and split protocols;
//! - [`train`]: training loop, evaluation and hyperparameter sweeps;
//! - [`verify`]: the executable invariant suite behind `magnet verify`.

pub mod autodiff;
pub mod data;
pub mod dense;
pub mod dsbm;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod train;
pub mod verify;

pub use dense::ComplexFeatureMatrix;
pub use error::{Error, Result};
pub use graph::{Charge, DirectedGraph};
pub use num_complex::Complex64;
pub use sparse::ComplexSparseMatrix;
pub use spectral::{MagneticLaplacian, Normalization};
