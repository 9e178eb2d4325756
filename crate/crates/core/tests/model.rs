use magnet_core::autodiff::Tape;
use magnet_core::data::degree_features;
use magnet_core::dsbm::{gaussian_features, generate, ordered_params};
use magnet_core::graph::DirectedGraph;
use magnet_core::model::*;
use magnet_core::ComplexFeatureMatrix;
use ndarray::{s, Array2};

fn node_cfg() -> MagNetConfig {
    MagNetConfig {
        q: 0.25,
        num_classes: 5,
        ..MagNetConfig::default()
    }
}

fn link_cfg() -> MagNetConfig {
    MagNetConfig {
        task: Task::LinkPrediction,
        num_classes: 2,
        ..MagNetConfig::default()
    }
}

fn dsbm(n: usize, seed: u64) -> (DirectedGraph, Array2<f64>) {
    let s = generate(&ordered_params(5, n, 0.2, 0.2, 0.05, seed).unwrap()).unwrap();
    (s.graph, gaussian_features(n, seed))
}

#[test]
fn parameter_count_matches_architecture() {
    let (g, _) = dsbm(40, 1);
    let cfg = MagNetConfig {
        bias: false,
        ..node_cfg()
    };
    let m = build_model(&g, &cfg, 2, 0).unwrap();
    assert_eq!(m.parameter_count(), 2 * 16 * 2 + 16 * 16 * 2 + 2 * 16 * 5);
    assert_eq!(cfg.parameter_count(2), m.parameter_count());
    let with_bias = build_model(&g, &node_cfg(), 2, 0).unwrap();
    assert_eq!(with_bias.parameter_count(), 736 + 16 + 16 + 5);
    let shared = MagNetConfig {
        share_theta: true,
        ..node_cfg()
    };
    assert_eq!(
        build_model(&g, &shared, 2, 0).unwrap().parameter_count(),
        shared.parameter_count(2)
    );
}

#[test]
fn seeds_control_initialization() {
    let (g, _) = dsbm(30, 2);
    let a = build_model(&g, &node_cfg(), 1, 7).unwrap();
    let b = build_model(&g, &node_cfg(), 1, 7).unwrap();
    let c = build_model(&g, &node_cfg(), 1, 8).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}

#[test]
fn q_zero_on_undirected_graph_stays_real() {
    let edges: Vec<(usize, usize)> = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
        .iter()
        .flat_map(|&(u, v)| [(u, v), (v, u)])
        .collect();
    let g = DirectedGraph::new(4, edges).unwrap();
    let cfg = MagNetConfig {
        q: 0.0,
        num_layers: 3,
        k: 2,
        ..node_cfg()
    };
    let m = build_model(&g, &cfg, 2, 3).unwrap();
    let mut tape = Tape::new();
    let x = ComplexFeatureMatrix::from_real(degree_features(&g) + 0.3);
    let u = m.record_embedding(&mut tape, &x).unwrap();
    let emb = tape.value(u).as_real();
    assert!(emb.slice(s![.., 16..]).iter().all(|&v| v == 0.0));
    assert!(emb.slice(s![.., ..16]).iter().any(|&v| v != 0.0));
}

#[test]
fn node_probabilities_are_row_stochastic() {
    let (g, x) = dsbm(50, 3);
    let m = build_model(&g, &node_cfg(), 1, 0).unwrap();
    let p = m.forward_node(&ComplexFeatureMatrix::from_real(x)).unwrap();
    assert_eq!(p.dim(), (50, 5));
    for r in p.rows() {
        assert!((r.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn relabeling_equivariance() {
    let (g, x) = dsbm(30, 4);
    let perm: Vec<usize> = (0..30).map(|v| (v * 7 + 3) % 30).collect();
    let gp = g.permute(&perm).unwrap();
    let xc = ComplexFeatureMatrix::from_real(x);
    let xp = xc.permute_rows(&perm);
    let a = build_model(&g, &node_cfg(), 1, 5).unwrap();
    let b = build_model(&gp, &node_cfg(), 1, 5).unwrap();
    let pa = a.forward_node(&xc).unwrap();
    let pb = b.forward_node(&xp).unwrap();
    for v in 0..30 {
        for c in 0..5 {
            assert!((pa[[v, c]] - pb[[perm[v], c]]).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_graph_identical_rows() {
    let g = DirectedGraph::empty(6);
    let m = build_model(&g, &node_cfg(), 2, 1).unwrap();
    let x = ComplexFeatureMatrix::from_real(Array2::from_shape_fn((6, 2), |(_, c)| c as f64 + 0.5));
    let p = m.forward_node(&x).unwrap();
    for r in 1..6 {
        assert_eq!(p.row(r), p.row(0));
    }
}

#[test]
fn wrong_feature_shape_is_rejected() {
    let (g, _) = dsbm(20, 1);
    let m = build_model(&g, &node_cfg(), 2, 1).unwrap();
    assert!(m.forward_node(&ComplexFeatureMatrix::zeros(20, 3)).is_err());
    assert!(m.forward_node(&ComplexFeatureMatrix::zeros(19, 2)).is_err());
}

#[test]
fn link_features_concatenate_in_order() {
    let (g, x) = dsbm(20, 5);
    let m = build_model(&g, &link_cfg(), 1, 2).unwrap();
    let mut tape = Tape::new();
    let u = m
        .record_embedding(&mut tape, &ComplexFeatureMatrix::from_real(x))
        .unwrap();
    let pairs = tape.gather_pairs(u, &[(3, 3), (2, 7), (7, 2)]).unwrap();
    let emb = tape.value(u).as_real().clone();
    let f = tape.value(pairs).as_real();
    let d = emb.ncols();
    assert_eq!(f.slice(s![0, ..d]), emb.row(3));
    assert_eq!(f.slice(s![0, d..]), emb.row(3));
    assert_eq!(f.slice(s![1, ..d]), f.slice(s![2, d..]));
    assert_eq!(f.slice(s![1, d..]), f.slice(s![2, ..d]));
    assert!(tape.gather_pairs(u, &[(0, 20)]).is_err());
}

#[test]
fn link_probabilities_are_row_stochastic() {
    let (g, x) = dsbm(25, 6);
    let m = build_model(&g, &link_cfg(), 1, 3).unwrap();
    let p = m
        .forward_link(&ComplexFeatureMatrix::from_real(x), &[(0, 1), (1, 0), (4, 9)])
        .unwrap();
    assert_eq!(p.dim(), (3, 2));
    for r in p.rows() {
        assert!((r.sum() - 1.0).abs() < 1e-12);
    }
}

/// Witness: single edge 0 -> 1, q = 0.25, seed 0, all-ones input.
#[test]
fn direction_sensitivity_witness() {
    let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
    let cfg = MagNetConfig { q: 0.25, ..link_cfg() };
    let a = build_model(&g, &cfg, 1, 0).unwrap();
    let b = build_model(&g.reversed(), &cfg, 1, 0).unwrap();
    let x = ComplexFeatureMatrix::from_real(Array2::ones((2, 1)));
    let pa = a.forward_link(&x, &[(0, 1)]).unwrap();
    let pb = b.forward_link(&x, &[(0, 1)]).unwrap();
    assert!((pa[[0, 0]] - pb[[0, 0]]).abs() > 1e-6, "{pa} vs {pb}");

    let cfg0 = MagNetConfig { q: 0.0, ..link_cfg() };
    let a0 = build_model(&g, &cfg0, 1, 0).unwrap();
    let b0 = build_model(&g.reversed(), &cfg0, 1, 0).unwrap();
    assert_eq!(
        a0.forward_link(&x, &[(0, 1)]).unwrap(),
        b0.forward_link(&x, &[(0, 1)]).unwrap()
    );
}

#[test]
fn output_shapes_across_grid() {
    let (g, x) = dsbm(20, 7);
    let x = ComplexFeatureMatrix::from_real(x);
    for layers in [2, 3] {
        for k in [1, 2] {
            for hidden in [16, 32, 48] {
                let cfg = MagNetConfig {
                    num_layers: layers,
                    k,
                    hidden_channels: hidden,
                    ..node_cfg()
                };
                let m = build_model(&g, &cfg, 1, 0).unwrap();
                assert_eq!(m.forward_node(&x).unwrap().dim(), (20, 5));
                let lc = MagNetConfig {
                    num_layers: layers,
                    k,
                    hidden_channels: hidden,
                    link_scheme: LinkScheme::ThreeClass,
                    num_classes: 3,
                    ..link_cfg()
                };
                let m = build_model(&g, &lc, 1, 0).unwrap();
                assert_eq!(m.forward_link(&x, &[(0, 1), (5, 2)]).unwrap().dim(), (2, 3));
            }
        }
    }
}

#[test]
fn invalid_configs_rejected() {
    let (g, _) = dsbm(20, 8);
    for cfg in [
        MagNetConfig {
            num_layers: 4,
            ..node_cfg()
        },
        MagNetConfig {
            num_layers: 1,
            ..node_cfg()
        },
        MagNetConfig { q: 0.3, ..node_cfg() },
        MagNetConfig {
            dropout: 1.0,
            ..node_cfg()
        },
        MagNetConfig {
            hidden_channels: 0,
            ..node_cfg()
        },
        MagNetConfig {
            num_classes: 3,
            ..link_cfg()
        },
    ] {
        assert!(build_model(&g, &cfg, 1, 0).is_err(), "{cfg:?}");
    }
    let wide = MagNetConfig {
        q: 0.3,
        unrestricted_q: true,
        ..node_cfg()
    };
    assert!(build_model(&g, &wide, 1, 0).is_ok());
}

#[test]
fn config_json_rejects_unknown_keys() {
    let cfg: MagNetConfig = serde_json::from_str(r#"{"q": 0.1, "hidden_channels": 32}"#).unwrap();
    assert_eq!(cfg.hidden_channels, 32);
    assert_eq!(cfg.k, 1);
    assert!(serde_json::from_str::<MagNetConfig>(r#"{"q": 0.1, "hiden": 3}"#).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let (g, x) = dsbm(20, 9);
    let a = build_model(&g, &node_cfg(), 1, 1).unwrap();
    let mut b = build_model(&g, &node_cfg(), 1, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    a.save_checkpoint(&path).unwrap();
    b.load_checkpoint_file(&path).unwrap();
    let x = ComplexFeatureMatrix::from_real(x);
    assert_eq!(a.forward_node(&x).unwrap(), b.forward_node(&x).unwrap());
}

#[test]
fn unnormalized_operator_supported() {
    let (g, x) = dsbm(30, 10);
    let cfg = MagNetConfig {
        normalization: magnet_core::Normalization::Unnormalized,
        ..node_cfg()
    };
    let m = build_model(&g, &cfg, 1, 0).unwrap();
    let p = m.forward_node(&ComplexFeatureMatrix::from_real(x)).unwrap();
    assert!(p.iter().all(|v| v.is_finite()));
}
