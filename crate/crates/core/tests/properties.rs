use std::path::Path;

use magnet_core::autodiff::{complex_relu, softmax_rows, unwind, Tape};
use magnet_core::data::{link_split, node_split_fraction, LinkSplitConfig};
use magnet_core::dsbm::{generate, ordered_params};
use magnet_core::graph::{self, edge_list_string, parse_edge_list, Charge, DirectedGraph};
use magnet_core::spectral::*;
use magnet_core::{Complex64, ComplexFeatureMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn digraph(max_n: usize) -> impl Strategy<Value = DirectedGraph> {
    (2..=max_n).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..(n * n))
            .prop_map(move |pairs| DirectedGraph::new(n, pairs.into_iter().filter(|(u, v)| u != v)).unwrap())
    })
}

fn charge() -> impl Strategy<Value = f64> {
    0.0..=0.25f64
}

fn cfm(n: usize, f: usize) -> impl Strategy<Value = ComplexFeatureMatrix> {
    proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), n * f)
        .prop_map(move |v| ComplexFeatureMatrix::from_fn(n, f, |r, c| Complex64::new(v[r * f + c].0, v[r * f + c].1)))
}

fn policy_laplacian(g: &DirectedGraph, q: f64, norm: Normalization) -> MagneticLaplacian {
    build_laplacian_with(g, Charge::new(q).unwrap(), norm, IsolatedPolicy::UnitDiagonal).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_is_exactly_hermitian(g in digraph(12), q in charge()) {
        for norm in [Normalization::Unnormalized, Normalization::Normalized] {
            prop_assert!(policy_laplacian(&g, q, norm).matrix().is_exactly_hermitian());
        }
        prop_assert!(graph::hermitian_adjacency(&g, Charge::new(q).unwrap()).is_exactly_hermitian());
    }

    #[test]
    fn spectrum_bounds(g in digraph(12), q in charge()) {
        let un = eigendecompose(&policy_laplacian(&g, q, Normalization::Unnormalized)).unwrap();
        prop_assert!(un.eigenvalues[0] >= -1e-9);
        let no = eigendecompose(&policy_laplacian(&g, q, Normalization::Normalized)).unwrap();
        prop_assert!(no.eigenvalues[0] >= -1e-9);
        prop_assert!(*no.eigenvalues.last().unwrap() <= 2.0 + 1e-9);
    }

    #[test]
    fn q_zero_is_classical(g in digraph(10)) {
        let a_s = graph::symmetrized_adjacency(&g);
        let un = build_laplacian(&g, Charge::new(0.0).unwrap(), Normalization::Unnormalized).unwrap();
        let cl = classical_laplacian(&a_s, Normalization::Unnormalized).unwrap();
        prop_assert!((un.matrix().to_dense() - cl.to_dense()).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-15);
        if g.in_degrees().iter().zip(g.out_degrees()).all(|(a, b)| a + b > 0) {
            let no = build_laplacian(&g, Charge::new(0.0).unwrap(), Normalization::Normalized).unwrap();
            let cl = classical_laplacian(&a_s, Normalization::Normalized).unwrap();
            prop_assert!((no.matrix().to_dense() - cl.to_dense()).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-15);
        }
    }

    #[test]
    fn relabeling_conjugates_laplacian(g in digraph(10), q in charge(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = g.num_vertices();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let l = policy_laplacian(&g, q, Normalization::Normalized);
        let lp = policy_laplacian(&g.permute(&perm).unwrap(), q, Normalization::Normalized);
        for (r, c, z) in l.matrix().iter() {
            prop_assert!((lp.matrix().get(perm[r], perm[c]) - z).norm() <= 1e-15);
        }
        prop_assert_eq!(l.matrix().nnz(), lp.matrix().nnz());
    }

    #[test]
    fn quadratic_form_is_real_nonnegative(g in digraph(10), q in charge(), x in cfm(10, 1)) {
        let l = policy_laplacian(&g, q, Normalization::Unnormalized);
        let v: Vec<Complex64> = x.column(0).into_iter().take(g.num_vertices()).collect();
        let f = quadratic_form(&l, &v).unwrap();
        prop_assert!(f.im.abs() <= 1e-9 * (1.0 + f.re.abs()));
        prop_assert!(f.re >= -1e-9);
    }

    #[test]
    fn fourier_round_trip(g in digraph(10), q in charge(), x in cfm(10, 1)) {
        let l = policy_laplacian(&g, q, Normalization::Normalized);
        let d = eigendecompose(&l).unwrap();
        let v: Vec<Complex64> = x.column(0).into_iter().take(g.num_vertices()).collect();
        let back = inverse_fourier(&d, &fourier_transform(&d, &v).unwrap()).unwrap();
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).norm() <= 1e-10);
        }
    }

    #[test]
    fn laplacian_export_round_trip(g in digraph(10), q in charge()) {
        let l = policy_laplacian(&g, q, Normalization::Normalized);
        let back = laplacian_from_str(&laplacian_to_string(&l)).unwrap();
        prop_assert_eq!(back, l);
    }

    #[test]
    fn edge_list_round_trip(g in digraph(15)) {
        let text = edge_list_string(&g);
        let load = parse_edge_list(&text, Path::new("mem"));
        if g.num_edges() == 0 {
            prop_assert!(load.is_err());
        } else {
            prop_assert_eq!(load.unwrap().graph, g);
        }
    }

    #[test]
    fn sparse_apply_matches_dense(g in digraph(10), q in charge(), x in cfm(10, 3)) {
        let h = graph::hermitian_adjacency(&g, Charge::new(q).unwrap());
        let n = g.num_vertices();
        let xs = ComplexFeatureMatrix::from_fn(n, 3, |r, c| x.get(r, c));
        let y = h.apply(&xs).unwrap();
        let dense = h.to_dense() * xs.to_nalgebra();
        prop_assert!(y.max_abs_diff(&ComplexFeatureMatrix::from_nalgebra(&dense)) <= 1e-12);
    }

    #[test]
    fn relu_idempotent(x in cfm(6, 4)) {
        let once = complex_relu(&x);
        prop_assert_eq!(complex_relu(&once), once);
    }

    #[test]
    fn unwind_is_linear(x in cfm(5, 3), y in cfm(5, 3), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mut comb = ComplexFeatureMatrix::zeros(5, 3);
        comb.axpy(a, &x);
        comb.axpy(b, &y);
        let mut lin = Array2::zeros((5, 6));
        lin.scaled_add(a, &unwind(&x));
        lin.scaled_add(b, &unwind(&y));
        prop_assert_eq!(unwind(&comb), lin);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in proptest::collection::vec(-50.0..50.0f64, 24)) {
        let l = Array2::from_shape_vec((4, 6), v).unwrap();
        for r in softmax_rows(&l).rows() {
            prop_assert!((r.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn xent_class_relabeling(v in proptest::collection::vec(-5.0..5.0f64, 12), labels in proptest::collection::vec(0..3usize, 4)) {
        let l = Array2::from_shape_vec((4, 3), v).unwrap();
        let perm = [2usize, 0, 1];
        let lp = Array2::from_shape_fn((4, 3), |(r, c)| l[[r, perm.iter().position(|&p| p == c).unwrap()]]);
        let t: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
        let tp: Vec<(usize, usize)> = labels.iter().map(|&y| perm[y]).enumerate().collect();
        let mut tape = Tape::new();
        let a = tape.input_real(l);
        let la = tape.softmax_xent(a, &t).unwrap();
        let b = tape.input_real(lp);
        let lb = tape.softmax_xent(b, &tp).unwrap();
        prop_assert!((tape.value(la).as_scalar() - tape.value(lb).as_scalar()).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dsbm_has_no_reciprocal_pairs(n in 10..120usize, a in 0.0..1.0f64, b in 0.0..1.0f64, seed in any::<u64>()) {
        let p = ordered_params(3, n, a, a, b, seed).unwrap();
        let s = generate(&p).unwrap();
        prop_assert!(s.graph.edges().iter().all(|&(u, v)| u != v && !s.graph.has_edge(v, u)));
        prop_assert_eq!(generate(&p).unwrap(), s);
    }

    #[test]
    fn residual_graph_stays_connected(seed in any::<u64>()) {
        let s = generate(&ordered_params(5, 150, 0.15, 0.15, 0.05, seed).unwrap()).unwrap();
        prop_assume!(s.graph.is_weakly_connected());
        let split = link_split(&s.graph, &LinkSplitConfig { seed, ..Default::default() }).unwrap();
        prop_assert!(split.residual_graph().unwrap().is_weakly_connected());
    }

    #[test]
    fn node_split_is_partition(n in 5..300usize, seed in any::<u64>()) {
        let s = node_split_fraction(n, (0.6, 0.2, 0.2), seed).unwrap();
        s.validate(n).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        prop_assert_eq!(s.val.len(), (0.2 * n as f64).floor() as usize);
    }
}
