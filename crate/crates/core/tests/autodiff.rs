use std::sync::Arc;

use magnet_core::autodiff::*;
use magnet_core::graph::{directed_cycle, Charge};
use magnet_core::sparse::ComplexSparseMatrix;
use magnet_core::spectral::{build_laplacian, scaled_laplacian, Normalization};
use magnet_core::{Complex64, ComplexFeatureMatrix};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_cfm(rng: &mut ChaCha8Rng, n: usize, f: usize) -> ComplexFeatureMatrix {
    ComplexFeatureMatrix::from_fn(n, f, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn single(z: Complex64) -> Complex64 {
    complex_relu(&ComplexFeatureMatrix::from_column(&[z])).get(0, 0)
}

#[test]
fn relu_boundary_semantics() {
    assert_eq!(single(c(1.0, 0.0)), c(1.0, 0.0));
    assert_eq!(single(c(-1.0, 0.0)), c(0.0, 0.0));
    assert_eq!(single(c(0.0, -1.0)), c(0.0, -1.0));
    assert_eq!(single(c(0.0, 1.0)), c(0.0, 0.0));
    assert_eq!(single(c(0.0, 0.0)), c(0.0, 0.0));
    assert_eq!(single(c(0.3, 5.0)), c(0.3, 5.0));
}

#[test]
fn operator_identity_and_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_cfm(&mut rng, 5, 3);
    let id = Arc::new(ComplexSparseMatrix::identity(5));
    let mut tape = Tape::new();
    let xi = tape.input_complex(x.clone());
    let y = tape.operator_apply(&id, xi).unwrap();
    assert_eq!(tape.value(y).as_complex(), &x);

    let rot = Arc::new(ComplexSparseMatrix::from_triplets(5, 5, (0..5).map(|i| (i, i, c(0.0, 1.0))), false).unwrap());
    let y = tape.operator_apply(&rot, xi).unwrap();
    let yv = tape.value(y).as_complex();
    for r in 0..5 {
        for f in 0..3 {
            let z = x.get(r, f);
            assert_eq!(yv.get(r, f), c(-z.im, z.re));
        }
    }
}

#[test]
fn operator_dimension_mismatch() {
    let op = Arc::new(ComplexSparseMatrix::identity(4));
    let mut tape = Tape::new();
    let x = tape.input_complex(ComplexFeatureMatrix::zeros(3, 2));
    assert!(tape.operator_apply(&op, x).is_err());
}

/// Loss `sum Re(op (x theta))` with a learnable real `theta`.
#[test]
fn operator_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 6;
    let trip: Vec<(usize, usize, Complex64)> = (0..n)
        .flat_map(|r| (0..n).map(move |cc| (r, cc)))
        .map(|(r, cc)| (r, cc, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
        .collect();
    let op = Arc::new(ComplexSparseMatrix::from_triplets(n, n, trip, false).unwrap());
    let x = random_cfm(&mut rng, n, 3);
    let mut params = ParamStore::new();
    let w = params.add(Parameter::real("w", glorot_uniform(3, 2, &mut rng)));
    let eval = |p: &ParamStore| {
        let mut tape = Tape::new();
        let xi = tape.input_complex(x.clone());
        let m = tape.mix(p, &[(xi, w)], None).unwrap();
        let y = tape.operator_apply(&op, m).unwrap();
        let l = tape.real_sum(y);
        (tape, l)
    };
    let (tape, l) = eval(&params);
    tape.backward(l, &mut params);
    let mut fd_params = params.clone();
    let rep = finite_difference_check(
        &mut fd_params,
        |p| {
            let (t, l) = eval(p);
            FdEval {
                loss: t.value(l).as_scalar(),
                pattern: 0,
            }
        },
        1e-6,
        10_000,
        &mut rng,
    )
    .unwrap();
    assert_eq!(rep.checked, 6);
    assert!(rep.max_rel_error < 1e-5, "{rep:?}");
}

/// Gradient with respect to the input passes through `op^†`.
#[test]
fn operator_adjoint_is_conjugate_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4;
    let trip: Vec<(usize, usize, Complex64)> = (0..n)
        .flat_map(|r| (0..n).map(move |cc| (r, cc)))
        .map(|(r, cc)| (r, cc, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
        .collect();
    let op = ComplexSparseMatrix::from_triplets(n, n, trip, false).unwrap();
    // d/dx sum Re(op x) for a real coordinate x_j is sum_i Re(op_ij); imaginary: -Im(op_ij).
    let mut params = ParamStore::new();
    let b = params.add(Parameter::complex("b", Array2::zeros((1, 1)), Array2::zeros((1, 1))));
    let mut tape = Tape::new();
    let x = tape.input_complex(ComplexFeatureMatrix::zeros(n, 1));
    let xb = tape.mix_bias(&params, x, b).unwrap();
    let y = tape.operator_apply(&Arc::new(op.clone()), xb).unwrap();
    let l = tape.real_sum(y);
    tape.backward(l, &mut params);
    let p = params.get(b);
    let expect_re: f64 = op.iter().map(|(_, _, z)| z.re).sum();
    let expect_im: f64 = op.iter().map(|(_, _, z)| -z.im).sum();
    assert!((p.grad_re[[0, 0]] - expect_re).abs() < 1e-12);
    assert!((p.grad_im.as_ref().unwrap()[[0, 0]] - expect_im).abs() < 1e-12);
}

fn cheb_layer(l: &Arc<ComplexSparseMatrix>, x: &ComplexFeatureMatrix, thetas: &[f64]) -> ComplexFeatureMatrix {
    let mut params = ParamStore::new();
    let mut tape = Tape::new();
    let mut basis = vec![tape.input_complex(x.clone())];
    if thetas.len() > 1 {
        basis.push(tape.operator_apply(l, basis[0]).unwrap());
    }
    for k in 2..thetas.len() {
        let lt = tape.operator_apply(l, basis[k - 1]).unwrap();
        basis.push(tape.lincomb(2.0, lt, basis[k - 2]));
    }
    let terms: Vec<_> = basis
        .iter()
        .zip(thetas)
        .map(|(&b, &t)| (b, params.add(Parameter::real("t", Array2::from_elem((1, 1), t)))))
        .collect();
    let y = tape.mix(&params, &terms, None).unwrap();
    tape.value(y).as_complex().clone()
}

#[test]
fn cheb_layer_special_cases() {
    let l = build_laplacian(&directed_cycle(5), Charge::new(0.2).unwrap(), Normalization::Normalized).unwrap();
    let ls = Arc::new(scaled_laplacian(&l, 2.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_cfm(&mut rng, 5, 1);
    assert!(cheb_layer(&ls, &x, &[1.0]).max_abs_diff(&x) == 0.0);
    let lx = ls.apply(&x).unwrap();
    assert!(cheb_layer(&ls, &x, &[0.0, 1.0]).max_abs_diff(&lx) < 1e-15);
}

/// Every theta of a two-channel, `K = 3` layer on an 8-vertex graph.
#[test]
fn cheb_layer_theta_gradients() {
    let g = magnet_core::graph::DirectedGraph::new(
        8,
        [
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 0),
            (4, 5),
            (5, 6),
            (6, 7),
            (7, 4),
            (0, 4),
            (6, 2),
        ],
    )
    .unwrap();
    let l = build_laplacian(&g, Charge::new(0.1).unwrap(), Normalization::Normalized).unwrap();
    let ls = Arc::new(scaled_laplacian(&l, 2.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_cfm(&mut rng, 8, 2);
    let mut params = ParamStore::new();
    let thetas: Vec<ParamId> = (0..4)
        .map(|k| params.add(Parameter::real(format!("t{k}"), glorot_uniform(2, 3, &mut rng))))
        .collect();
    let eval = |p: &ParamStore| {
        let mut tape = Tape::new();
        let mut basis = vec![tape.input_complex(x.clone())];
        basis.push(tape.operator_apply(&ls, basis[0]).unwrap());
        for k in 2..4 {
            let lt = tape.operator_apply(&ls, basis[k - 1]).unwrap();
            basis.push(tape.lincomb(2.0, lt, basis[k - 2]));
        }
        let terms: Vec<_> = basis.into_iter().zip(thetas.iter().copied()).collect();
        let y = tape.mix(p, &terms, None).unwrap();
        let l = tape.real_sum(y);
        (tape, l)
    };
    let (tape, loss) = eval(&params);
    tape.backward(loss, &mut params);
    let rep = finite_difference_check(
        &mut params.clone(),
        |p| {
            let (t, l) = eval(p);
            FdEval {
                loss: t.value(l).as_scalar(),
                pattern: 0,
            }
        },
        1e-6,
        10_000,
        &mut rng,
    );
    let rep = rep.unwrap();
    assert_eq!(rep.checked, 24);
    assert!(rep.max_rel_error < 1e-5, "{rep:?}");
}

#[test]
fn unwind_examples() {
    let x = ComplexFeatureMatrix::from_column(&[c(1.0, 2.0)]);
    assert_eq!(unwind(&x), array![[1.0, 2.0]]);
    let r = ComplexFeatureMatrix::from_real(array![[1.0, 2.0], [3.0, 4.0]]);
    let u = unwind(&r);
    assert_eq!(u.slice(ndarray::s![.., 2..]).sum(), 0.0);
    assert_eq!(u.slice(ndarray::s![.., ..2]), r.re().view());
}

/// The adjoint of unwind hands the left half back to the real plane and the
/// right half to the imaginary plane.
#[test]
fn unwind_adjoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut params = ParamStore::new();
    let w = params.add(Parameter::real(
        "w",
        Array2::from_shape_fn((6, 2), |(r, c)| if c == 0 { g[r] } else { 0.0 }),
    ));
    let b = params.add(Parameter::complex(
        "b",
        Array2::from_shape_fn((1, 3), |_| rng.gen_range(-1.0..1.0)),
        Array2::from_shape_fn((1, 3), |_| rng.gen_range(-1.0..1.0)),
    ));
    let mut tape = Tape::new();
    let xi = tape.input_complex(ComplexFeatureMatrix::zeros(1, 3));
    let xb = tape.mix_bias(&params, xi, b).unwrap();
    let u = tape.unwind(xb);
    let lg = tape.linear(&params, u, w, None).unwrap();
    let loss = tape.softmax_xent(lg, &[(0, 0)]).unwrap();
    let p0 = tape.probabilities(loss).unwrap()[[0, 0]];
    tape.backward(loss, &mut params);
    let pb = params.get(b);
    for j in 0..3 {
        assert!((pb.grad_re[[0, j]] - (p0 - 1.0) * g[j]).abs() < 1e-15);
        assert!((pb.grad_im.as_ref().unwrap()[[0, j]] - (p0 - 1.0) * g[3 + j]).abs() < 1e-15);
    }
}

#[test]
fn empty_mask_is_an_error() {
    let mut tape = Tape::new();
    let lg = tape.input_real(Array2::zeros((3, 2)));
    assert!(tape.softmax_xent(lg, &[]).is_err());
}

#[test]
fn softmax_examples() {
    let mut params = ParamStore::new();
    let w = params.add(Parameter::real("w", Array2::zeros((2, 5))));
    let mut tape = Tape::new();
    let h = tape.input_real(array![[1.0, -2.0], [0.5, 3.0]]);
    let lg = tape.linear(&params, h, w, None).unwrap();
    let l = tape.softmax_xent(lg, &[(0, 3), (1, 1)]).unwrap();
    assert!((tape.value(l).as_scalar() - 5f64.ln()).abs() < 1e-15);
    let p = tape.probabilities(l).unwrap();
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));

    let mut tape = Tape::new();
    let lg = tape.input_real(array![[100.0, 0.0, 0.0]]);
    let l = tape.softmax_xent(lg, &[(0, 0)]).unwrap();
    assert!(tape.value(l).as_scalar() < 1e-40);
}

#[test]
fn softmax_weight_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
    let mut params = ParamStore::new();
    let w = params.add(Parameter::real("w", glorot_uniform(4, 3, &mut rng)));
    let b = params.add(Parameter::real(
        "b",
        Array2::from_shape_fn((1, 3), |_| rng.gen_range(-0.1..0.1)),
    ));
    let targets = [(0, 1), (2, 0), (3, 2), (5, 2)];
    let eval = |p: &ParamStore| {
        let mut tape = Tape::new();
        let hi = tape.input_real(h.clone());
        let lg = tape.linear(p, hi, w, Some(b)).unwrap();
        let l = tape.softmax_xent(lg, &targets).unwrap();
        (tape, l)
    };
    let (tape, l) = eval(&params);
    tape.backward(l, &mut params);
    let rep = finite_difference_check(
        &mut params,
        |p| {
            let (t, l) = eval(p);
            FdEval {
                loss: t.value(l).as_scalar(),
                pattern: 0,
            }
        },
        1e-6,
        10_000,
        &mut rng,
    )
    .unwrap();
    assert_eq!(rep.checked, 15);
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_fn((10, 10), |_| rng.gen_range(-1.0..1.0));
    let mut tape = Tape::new();
    let xi = tape.input_real(x.clone());
    let y = tape.dropout(xi, 0.0, Some(&mut rng)).unwrap();
    assert_eq!(tape.value(y).as_real(), &x);
    let y = tape.dropout(xi, 0.7, None).unwrap();
    assert_eq!(tape.value(y).as_real(), &x);
    assert!(tape.dropout(xi, 1.0, None).is_err());
}

#[test]
fn dropout_survivor_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = dropout_mask((1000, 1000), 0.5, &mut rng);
    let frac = mask.iter().filter(|&&m| m != 0.0).count() as f64 / 1e6;
    assert!((frac - 0.5).abs() <= 0.003, "{frac}");
    assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
}

fn scalar_store(w: f64) -> (ParamStore, ParamId) {
    let mut p = ParamStore::new();
    let id = p.add(Parameter::real("w", Array2::from_elem((1, 1), w)));
    (p, id)
}

#[test]
fn adam_examples() {
    let (mut p, id) = scalar_store(1.0);
    let mut adam = Adam::new(0.01, 0.0);
    adam.step(&mut p);
    assert_eq!(p.get(id).re[[0, 0]], 1.0);

    let (mut p, id) = scalar_store(1.0);
    p.get_mut(id).grad_re[[0, 0]] = 1.0;
    let mut adam = Adam::new(0.01, 0.0);
    adam.step(&mut p);
    assert!((p.get(id).re[[0, 0]] - 0.99).abs() < 1e-9);

    let (mut p, id) = scalar_store(0.0);
    let mut adam = Adam::new(0.01, 0.0);
    for _ in 0..100 {
        p.get_mut(id).grad_re[[0, 0]] = -3.0;
        adam.step(&mut p);
    }
    assert!(p.get(id).re[[0, 0]] > 0.5);
}

#[test]
fn weight_decay_shrinks() {
    let (mut p, id) = scalar_store(2.0);
    let mut adam = Adam::new(0.01, 5e-4);
    adam.step(&mut p);
    assert!(p.get(id).re[[0, 0]] < 2.0);
}

#[test]
fn fd_check_exact_for_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_cfm(&mut rng, 5, 2);
    let mut params = ParamStore::new();
    let w = params.add(Parameter::real("w", glorot_uniform(2, 3, &mut rng)));
    let b = params.add(Parameter::complex("b", Array2::zeros((1, 3)), Array2::ones((1, 3))));
    let eval = |p: &ParamStore| {
        let mut tape = Tape::new();
        let xi = tape.input_complex(x.clone());
        let m = tape.mix(p, &[(xi, w)], Some(b)).unwrap();
        let l = tape.real_sum(m);
        (tape, l)
    };
    let (t, l) = eval(&params);
    t.backward(l, &mut params);
    let rep = finite_difference_check(
        &mut params,
        |p| {
            let (t, l) = eval(p);
            FdEval {
                loss: t.value(l).as_scalar(),
                pattern: t.relu_fingerprint(),
            }
        },
        1e-6,
        10_000,
        &mut rng,
    )
    .unwrap();
    assert_eq!(rep.checked, 12);
    assert!(rep.max_rel_error < 1e-8, "{rep:?}");
}

#[test]
fn fd_check_excludes_boundary_units() {
    let mut params = ParamStore::new();
    let w = params.add(Parameter::real("w", Array2::zeros((1, 1))));
    let x = ComplexFeatureMatrix::from_column(&[c(1.0, 0.0)]);
    let eval = |p: &ParamStore| {
        let mut tape = Tape::new();
        let xi = tape.input_complex(x.clone());
        let m = tape.mix(p, &[(xi, w)], None).unwrap();
        let r = tape.complex_relu(m);
        let l = tape.real_sum(r);
        (tape, l)
    };
    let (t, l) = eval(&params);
    t.backward(l, &mut params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rep = finite_difference_check(
        &mut params,
        |p| {
            let (t, l) = eval(p);
            FdEval {
                loss: t.value(l).as_scalar(),
                pattern: t.relu_fingerprint(),
            }
        },
        1e-6,
        10,
        &mut rng,
    )
    .unwrap();
    assert_eq!((rep.checked, rep.excluded), (0, 1));
}

#[test]
fn fd_step_range_enforced() {
    let (mut p, _) = scalar_store(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = finite_difference_check(&mut p, |_| FdEval { loss: 0.0, pattern: 0 }, 1e-2, 10, &mut rng);
    assert!(r.is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = ParamStore::new();
    p.add(Parameter::real("a", glorot_uniform(3, 4, &mut rng)));
    p.add(Parameter::complex(
        "b",
        Array2::from_shape_fn((1, 4), |_| rng.gen::<f64>() * 1e-300),
        Array2::from_shape_fn((1, 4), |_| rng.gen::<f64>() / 3.0),
    ));
    let json = p.to_checkpoint().to_json().unwrap();
    let mut q = p.clone();
    for par in q.iter_mut() {
        par.re.fill(0.0);
    }
    q.load_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
    assert_eq!(p, q);
    let mut bad: serde_json::Value = serde_json::from_str(&json).unwrap();
    bad["format_version"] = 99.into();
    assert!(q.load_checkpoint(&serde_json::from_value(bad).unwrap()).is_err());
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_cfm(&mut rng, 6, 2);
        let mut p = ParamStore::new();
        let w = p.add(Parameter::real("w", glorot_uniform(2, 3, &mut rng)));
        let mut tape = Tape::new();
        let xi = tape.input_complex(x);
        let m = tape.mix(&p, &[(xi, w)], None).unwrap();
        let r = tape.complex_relu(m);
        let u = tape.unwind(r);
        let d = tape.dropout(u, 0.5, Some(&mut rng)).unwrap();
        let l = tape.softmax_xent(d, &[(0, 1), (3, 4)]).unwrap();
        tape.backward(l, &mut p);
        (tape.value(l).as_scalar().to_bits(), p)
    };
    assert_eq!(run(), run());
}
