//! Executable invariant suite behind `magnet verify`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_difference_check, FdEval, FdReport, ParamStore, Tape};
use crate::dense::ComplexFeatureMatrix;
use crate::dsbm::{gaussian_features, generate, ordered_params};
use crate::error::Result;
use crate::graph::{self, directed_cycle, in_star, out_star, Charge, DirectedGraph};
use crate::model::{build_model, build_model_with_operator, MagNet, MagNetConfig};
use crate::sparse::ComplexSparseMatrix;
use crate::spectral::{
    self, build_laplacian_with, cheb_filter_apply, cycle_spectrum_oracle, eigendecompose, spectral_conv_matrix,
    star_spectrum_oracle, ChebCoefficients, IsolatedPolicy, MagneticLaplacian, Normalization, StarDirection,
};

pub const Q_GRID: [f64; 6] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub quick: bool,
    /// Flip the sign of one phase entry before the Hermiticity check.
    pub inject_phase_sign_flip: bool,
    pub seed: u64,
}

/// Erdos-Renyi digraph on `2..=max_n` vertices with a random edge density.
pub fn random_digraph(rng: &mut impl Rng, max_n: usize) -> DirectedGraph {
    let n = rng.gen_range(2..=max_n);
    let p = rng.gen_range(0.05..0.6);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    DirectedGraph::new(n, edges).expect("valid edges")
}

/// Extreme eigenvalues over random digraphs for every `q` and both
/// normalizations: `(min over all, max over normalized)`.
pub fn spectral_bounds_sweep(num_graphs: usize, max_n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_eig = f64::INFINITY;
    let mut max_norm = f64::NEG_INFINITY;
    for _ in 0..num_graphs {
        let g = random_digraph(&mut rng, max_n);
        for &q in &Q_GRID {
            for norm in [Normalization::Unnormalized, Normalization::Normalized] {
                let l = build_laplacian_with(&g, Charge::new(q)?, norm, IsolatedPolicy::UnitDiagonal)?;
                let ev = eigendecompose(&l)?.eigenvalues;
                min_eig = min_eig.min(ev[0]);
                if norm == Normalization::Normalized {
                    max_norm = max_norm.max(ev[ev.len() - 1]);
                }
            }
        }
    }
    Ok((min_eig, max_norm))
}

/// `max |u e^{i phi} - v|` over the best phase `phi`, for unit-norm inputs.
pub fn phase_aligned_distance(u: &[Complex64], v: &[Complex64]) -> f64 {
    let inner: Complex64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    let rot = if inner.norm() > 0.0 {
        inner / inner.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    u.iter().zip(v).map(|(a, b)| (a * rot - b).norm()).fold(0.0, f64::max)
}

fn unit(v: &[Complex64]) -> Vec<Complex64> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z / n).collect()
}

/// Worst deviation of the star spectra from their closed form.
pub fn star_oracle_error(ns: std::ops::RangeInclusive<usize>, qs: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in ns {
        for &q in qs {
            for dir in [StarDirection::In, StarDirection::Out] {
                let g = match dir {
                    StarDirection::In => in_star(n),
                    StarDirection::Out => out_star(n),
                };
                let l = spectral::build_laplacian(&g, Charge::new(q)?, Normalization::Unnormalized)?;
                let d = eigendecompose(&l)?;
                let oracle = star_spectrum_oracle(n, q, dir)?;
                for (a, b) in d.eigenvalues.iter().zip(&oracle.eigenvalues) {
                    worst = worst.max((a - b).abs());
                }
                worst = worst.max(phase_aligned_distance(&d.eigenvector(0), &unit(&oracle.lead)));
                worst = worst.max(phase_aligned_distance(&d.eigenvector(n - 1), &unit(&oracle.last)));
            }
        }
    }
    Ok(worst)
}

/// Projector of the computed eigenspace at `lambda` (tolerance `tol`).
fn eigenspace_projector(vectors: &DMatrix<Complex64>, values: &[f64], lambda: f64, tol: f64) -> DMatrix<Complex64> {
    let n = vectors.nrows();
    let mut p = DMatrix::zeros(n, n);
    for (k, &ev) in values.iter().enumerate() {
        if (ev - lambda).abs() <= tol {
            let c = vectors.column(k);
            p += c * c.adjoint();
        }
    }
    p
}

/// `(eigenvalue error, eigenvector projector error)` of the directed cycle.
pub fn cycle_oracle_error(ns: std::ops::RangeInclusive<usize>, qs: &[f64]) -> Result<(f64, f64)> {
    let (mut val_err, mut vec_err): (f64, f64) = (0.0, 0.0);
    for n in ns {
        for &q in qs {
            for norm in [Normalization::Unnormalized, Normalization::Normalized] {
                let l = spectral::build_laplacian(&directed_cycle(n), Charge::new(q)?, norm)?;
                let d = eigendecompose(&l)?;
                let (mut oracle, vectors) = cycle_spectrum_oracle(n, q)?;
                let mut sorted = oracle.clone();
                sorted.sort_by(f64::total_cmp);
                for (a, b) in d.eigenvalues.iter().zip(&sorted) {
                    val_err = val_err.max((a - b).abs());
                }
                for (k, lambda) in oracle.drain(..).enumerate() {
                    let p = eigenspace_projector(&d.eigenvectors, &d.eigenvalues, lambda, 1e-7);
                    let u: DVector<Complex64> = vectors.column(k).into_owned();
                    let resid = (&p * &u - &u).norm();
                    vec_err = vec_err.max(resid);
                }
            }
        }
    }
    Ok((val_err, vec_err))
}

/// Chebyshev recurrence against `U diag(g(lambda)) U^†` on random graphs;
/// returns the worst entrywise difference.
pub fn chebyshev_vs_dense(num_graphs: usize, max_n: usize, max_k: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..num_graphs {
        let g = random_digraph(&mut rng, max_n);
        let q = rng.gen_range(0.0..=0.25);
        let norm = if rng.gen::<bool>() {
            Normalization::Normalized
        } else {
            Normalization::Unnormalized
        };
        let l = build_laplacian_with(&g, Charge::new(q)?, norm, IsolatedPolicy::UnitDiagonal)?;
        let d = eigendecompose(&l)?;
        let lambda_max = match norm {
            Normalization::Normalized => 2.0,
            Normalization::Unnormalized => d.eigenvalues[d.len() - 1].max(1.0),
        };
        let k = rng.gen_range(0..=max_k);
        let coeffs = ChebCoefficients::new((0..=k).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let n = g.num_vertices();
        let x = ComplexFeatureMatrix::from_fn(n, 3, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let cheb = cheb_filter_apply(&spectral::scaled_laplacian(&l, lambda_max)?, &coeffs, &x)?;
        let sigma: Vec<f64> = d
            .eigenvalues
            .iter()
            .map(|&ev| coeffs.eval(2.0 * ev / lambda_max - 1.0))
            .collect();
        let dense = spectral_conv_matrix(&d, &sigma)? * x.to_nalgebra();
        worst = worst.max(cheb.max_abs_diff(&ComplexFeatureMatrix::from_nalgebra(&dense)));
    }
    Ok(worst)
}

/// Small weakly connected labelled DSBM instance used by the gradient checks.
pub fn tiny_instance(seed: u64) -> Result<(DirectedGraph, Array2<f64>, Vec<usize>)> {
    let mut sub = seed;
    loop {
        let s = generate(&ordered_params(2, 8, 0.6, 0.7, 0.2, sub)?)?;
        if s.graph.is_weakly_connected() {
            return Ok((s.graph, gaussian_features(8, seed), s.labels));
        }
        sub = sub.wrapping_add(0x9e37_79b9);
    }
}

fn node_loss(model: &MagNet, x0: &ComplexFeatureMatrix, targets: &[(usize, usize)]) -> Result<(Tape, usize)> {
    let mut tape = Tape::new();
    let logits = model.record_node_logits(&mut tape, x0, None)?;
    let loss = tape.softmax_xent(logits, targets)?;
    Ok((tape, loss))
}

/// Finite-difference check of the full node-classification loss of `model`.
pub fn model_gradient_check(
    model: &mut MagNet,
    x0: &ComplexFeatureMatrix,
    labels: &[usize],
    eps: f64,
) -> Result<FdReport> {
    let targets: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    let (tape, loss) = node_loss(model, x0, &targets)?;
    tape.backward(loss, &mut model.params);
    let frozen = model.clone();
    let mut params: ParamStore = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    finite_difference_check(
        &mut params,
        |p| {
            let mut m = frozen.clone();
            m.params = p.clone();
            let (tape, loss) = node_loss(&m, x0, &targets).expect("shapes fixed");
            FdEval {
                loss: tape.value(loss).as_scalar(),
                pattern: tape.relu_fingerprint(),
            }
        },
        eps,
        10_000,
        &mut rng,
    )
}

/// Two-layer MagNet on an 8-vertex DSBM graph against central differences.
pub fn gradient_check_tiny(seed: u64) -> Result<FdReport> {
    let (g, x, labels) = tiny_instance(seed)?;
    let cfg = MagNetConfig {
        q: 0.15,
        num_classes: 2,
        hidden_channels: 8,
        dropout: 0.0,
        ..MagNetConfig::default()
    };
    let mut model = build_model(&g, &cfg, x.ncols(), seed)?;
    model_gradient_check(&mut model, &ComplexFeatureMatrix::from_real(x), &labels, 1e-6)
}

/// Classical scaled normalized Laplacian `I - D^-1/2 A_s D^-1/2 - I`.
pub fn classical_operator(g: &DirectedGraph) -> Result<ComplexSparseMatrix> {
    let m = spectral::classical_laplacian(&graph::symmetrized_adjacency(g), Normalization::Normalized)?;
    spectral::scaled_laplacian(&MagneticLaplacian::from_matrix(0.0, Normalization::Normalized, m)?, 2.0)
}

/// `(forward difference, gradient difference)` between a `q = 0` MagNet and
/// the same network on the classical Laplacian.
pub fn q_zero_reduction(seed: u64) -> Result<(f64, f64)> {
    let (g, x, labels) = tiny_instance(seed)?;
    let cfg = MagNetConfig {
        q: 0.0,
        num_classes: 2,
        dropout: 0.0,
        ..MagNetConfig::default()
    };
    let mut a = build_model(&g, &cfg, 1, seed)?;
    let mut b = build_model_with_operator(classical_operator(&g)?, &cfg, 1, seed)?;
    let x0 = ComplexFeatureMatrix::from_real(x);
    let fa = a.forward_node(&x0)?;
    let fb = b.forward_node(&x0)?;
    let fwd = (&fa - &fb).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let targets: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    for m in [&mut a, &mut b] {
        let (tape, loss) = node_loss(m, &x0, &targets)?;
        tape.backward(loss, &mut m.params);
    }
    let mut grad: f64 = 0.0;
    for (pa, pb) in a.params.iter().zip(b.params.iter()) {
        for k in 0..pa.real_len() {
            grad = grad.max((pa.grad_coord(k) - pb.grad_coord(k)).abs());
        }
    }
    Ok((fwd, grad))
}

/// Hermitian adjacency of a random digraph, optionally with one phase sign
/// flipped on a single side; returns the Hermiticity defect.
pub fn hermiticity_defect(seed: u64, inject_flip: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = loop {
        let g = random_digraph(&mut rng, 16);
        if g.edges().iter().any(|&(u, v)| !g.has_edge(v, u)) {
            break g;
        }
    };
    let mut h = graph::hermitian_adjacency(&g, Charge::new(0.1)?);
    if inject_flip {
        let &(u, v) = g.edges().iter().find(|&&(u, v)| !g.has_edge(v, u)).expect("exists");
        h = h.map_values(false, |r, c, z| if (r, c) == (u, v) { z.conj() } else { z });
    }
    Ok(h.hermitian_defect())
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every check; `quick` shrinks the sweeps.
pub fn run_suite(opts: VerifyOptions) -> VerifyReport {
    let (graphs, cheb_graphs, ns) = if opts.quick { (40, 10, 3..=8) } else { (200, 50, 3..=12) };
    let seed = opts.seed;
    let mut checks = Vec::new();
    checks.push(timed("hermiticity", || {
        let d = hermiticity_defect(seed, opts.inject_phase_sign_flip)?;
        Ok((d == 0.0, format!("defect {d:.3e}")))
    }));
    let mut max_norm = f64::NAN;
    checks.push(timed("psd", || {
        let (min_eig, mx) = spectral_bounds_sweep(graphs, 32, seed)?;
        max_norm = mx;
        Ok((
            min_eig >= -1e-9,
            format!("min eigenvalue {min_eig:.3e} over {graphs} graphs"),
        ))
    }));
    checks.push(timed("normalized_bound", || {
        Ok((
            max_norm <= 2.0 + 1e-9,
            format!("max normalized eigenvalue {max_norm:.12}"),
        ))
    }));
    checks.push(timed("star_oracle", || {
        let e = star_oracle_error(ns.clone(), &[0.0, 0.1, 0.25])?;
        Ok((e <= 1e-8, format!("max deviation {e:.3e}")))
    }));
    checks.push(timed("cycle_oracle", || {
        let (v, u) = cycle_oracle_error(ns.clone(), &[0.0, 0.1, 0.25])?;
        Ok((v <= 1e-8 && u <= 1e-7, format!("eigenvalue {v:.3e}, projector {u:.3e}")))
    }));
    checks.push(timed("chebyshev_vs_dense", || {
        let e = chebyshev_vs_dense(cheb_graphs, 64, 5, seed)?;
        Ok((e <= 1e-7, format!("max deviation {e:.3e}")))
    }));
    checks.push(timed("gradient", || {
        let r = gradient_check_tiny(seed)?;
        Ok((
            r.max_rel_error <= 1e-4 && r.checked > 0,
            format!(
                "max relative error {:.3e}, {} checked, {} excluded",
                r.max_rel_error, r.checked, r.excluded
            ),
        ))
    }));
    checks.push(timed("q_zero_reduction", || {
        let (f, g) = q_zero_reduction(seed)?;
        Ok((f <= 1e-10 && g <= 1e-10, format!("forward {f:.3e}, gradient {g:.3e}")))
    }));
    VerifyReport { checks }
}
