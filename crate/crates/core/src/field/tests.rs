use super::*;
use crate::testutil::{rng, flat_grads, flat_params, set_flat};
use approx::assert_abs_diff_eq;
use ndarray::{arr2, Array};
use proptest::prelude::*;
use seafield_oracles::{fd_gradcheck, loop_rff};

fn freq_rows(e: &RffEncoder) -> Vec<Vec<f64>> {
    e.frequencies.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn rff_matches_loop_reference() {
    let e = RffEncoder::from_seed(8, 2, 10.0, 3);
    let x = [0.3, 0.7];
    let ours = e.encode(&x);
    let reference = loop_rff(&freq_rows(&e), &x);
    for (a, b) in ours.iter().zip(&reference) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn rff_at_origin_is_ones_then_zeros() {
    let e = RffEncoder::from_seed(4, 2, 10.0, 1);
    let v = e.encode(&[0.0, 0.0]);
    assert_eq!(v.as_slice().unwrap(), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn rff_frequency_scale_follows_sigma() {
    let e = RffEncoder::from_seed(4000, 2, 10.0, 9);
    let n = e.frequencies.len() as f64;
    let var = e.frequencies.iter().map(|v| v * v).sum::<f64>() / n;
    assert!((var.sqrt() - 10.0).abs() < 0.3, "std {}", var.sqrt());
}

#[test]
fn rff_rows_match_single() {
    let e = RffEncoder::from_seed(5, 2, 3.0, 4);
    let x = arr2(&[[0.1, 0.2], [0.9, 0.0], [0.5, 0.5]]);
    let rows = e.encode_rows(x.view());
    for (i, r) in x.rows().into_iter().enumerate() {
        let single = e.encode(r.as_slice().unwrap());
        for (a, b) in rows.row(i).iter().zip(single.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn node_embeddings_are_distinct_and_bounded() {
    let table = NodeEmbeddingTable::new(20, RffEncoder::from_seed(16, 1, 1.0, 5));
    assert_eq!(table.dim(), 32);
    for i in 0..20 {
        let a = table.embed(i).unwrap();
        let norm2: f64 = a.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(norm2, 16.0, epsilon = 1e-9);
        for j in 0..i {
            let b = table.embed(j).unwrap();
            let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
            assert!(d > 1e-6, "nodes {i} and {j} share a code");
        }
    }
    assert!(matches!(table.embed(20), Err(Error::NodeOutOfRange { index: 20, len: 20 })));
}

#[test]
fn encoder_kind_round_trip() {
    for k in [EncoderKind::Rff, EncoderKind::Siren, EncoderKind::Linear] {
        assert_eq!(EncoderKind::parse(k.as_str()).unwrap(), k);
    }
    assert!(EncoderKind::parse("fourier").is_err());
}

#[test]
fn rff_width_must_be_even() {
    let mut store = ParamStore::new();
    let spec = EncoderSpec { kind: EncoderKind::Rff, input_dim: 2, output_dim: 7, sigma: 1.0, omega0: 30.0 };
    assert!(make_encoder(&spec, &mut store, "e", &mut rng(0)).is_err());
}

fn small_config() -> FieldConfig {
    FieldConfig {
        time_frequencies: 3,
        node_frequencies: 2,
        hidden: 4,
        layers: 2,
        out_dim: 2,
        ..FieldConfig::default()
    }
}

/// Loop reference for the field: encode, concatenate, MLP.
fn loop_field(field: &ConditionalNeuralField, store: &ParamStore, coords: &[f64], node: usize) -> Vec<f64> {
    let InputEncoder::Rff(enc) = &field.time_encoder else { panic!("rff expected") };
    let mut x = loop_rff(&freq_rows(enc), &coords[..2]);
    if field.config.with_weekend {
        x.push(coords[2]);
    }
    let code = loop_rff(&freq_rows(field.nodes.encoder()), &[node as f64 / field.nodes.node_count() as f64]);
    x.extend(code);
    for (l, &(w, b)) in field.layers.iter().enumerate() {
        if l > 0 {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let w = store.value(w);
        let b = store.value(b);
        let out = b.len();
        x = (0..out)
            .map(|o| b[[o]] + (0..x.len()).map(|i| x[i] * w[[i, o]]).sum::<f64>())
            .collect();
    }
    x
}

#[test]
fn field_matches_loop_reference() {
    for with_weekend in [false, true] {
        let mut store = ParamStore::new();
        let cfg = FieldConfig { with_weekend, layers: 3, ..small_config() };
        let field = ConditionalNeuralField::new(cfg, 5, &mut store, "cnf", &mut rng(1)).unwrap();
        let coords = Array::from_shape_fn((2, 3, cfg.coord_width()), |(b, t, c)| {
            if c == 2 { (b + t) as f64 % 2.0 } else { 0.1 * (b + 2 * t + c) as f64 }
        });
        let nodes = [4, 0, 2];
        let mut g = Graph::new();
        let out = field.forward_batch(&mut g, &store, coords.view(), &nodes).unwrap();
        let v = g.value(out);
        assert_eq!(v.shape(), &[2, 3, 3, 2]);
        for b in 0..2 {
            for (ni, &node) in nodes.iter().enumerate() {
                for t in 0..3 {
                    let c: Vec<f64> = coords.slice(s![b, t, ..]).to_vec();
                    let expect = loop_field(&field, &store, &c, node);
                    for d in 0..2 {
                        assert_abs_diff_eq!(v[[b, ni, t, d]], expect[d], epsilon = 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn evaluate_layout_is_time_node_feature() {
    let mut store = ParamStore::new();
    let field = ConditionalNeuralField::new(small_config(), 3, &mut store, "cnf", &mut rng(2)).unwrap();
    let coords = arr2(&[[0.0, 0.0], [0.25, 0.5], [0.5, 1.0], [0.75, 0.0]]);
    let out = field.evaluate(&store, coords.view(), &[0, 1, 2]).unwrap();
    assert_eq!(out.dim(), (4, 3, 2));
    let expect = loop_field(&field, &store, &[0.25, 0.5], 2);
    assert_abs_diff_eq!(out[[1, 2, 0]], expect[0], epsilon = 1e-10);
    assert_abs_diff_eq!(out[[1, 2, 1]], expect[1], epsilon = 1e-10);
}

#[test]
fn field_rejects_bad_inputs() {
    let mut store = ParamStore::new();
    let field = ConditionalNeuralField::new(small_config(), 3, &mut store, "cnf", &mut rng(2)).unwrap();
    let bad = arr2(&[[1.5, 0.0]]);
    assert!(matches!(
        field.evaluate(&store, bad.view(), &[0]),
        Err(Error::CoordinateOutOfDomain { .. })
    ));
    let ok = arr2(&[[0.5, 0.0]]);
    assert!(matches!(field.evaluate(&store, ok.view(), &[3]), Err(Error::NodeOutOfRange { .. })));
    let cfg = FieldConfig { layers: 0, ..small_config() };
    assert!(ConditionalNeuralField::new(cfg, 3, &mut store, "x", &mut rng(0)).is_err());
}

#[test]
fn field_parameter_count() {
    let mut store = ParamStore::new();
    let cfg = FieldConfig { out_dim: 32, ..FieldConfig::default() };
    ConditionalNeuralField::new(cfg, 10, &mut store, "cnf", &mut rng(0)).unwrap();
    let d0 = 128 + 32;
    let expect = d0 * 256 + 256 + 256 * 256 + 256 + 256 * 32 + 32;
    assert_eq!(store.num_trainable(), expect);
}

#[test]
fn tiny_field_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let cfg = FieldConfig {
        time_frequencies: 2,
        node_frequencies: 1,
        hidden: 3,
        layers: 2,
        out_dim: 2,
        ..FieldConfig::default()
    };
    let field = ConditionalNeuralField::new(cfg, 2, &mut store, "cnf", &mut rng(7)).unwrap();
    assert!(store.num_trainable() <= 64);
    let coords = Array::from_shape_fn((1, 2, 2), |(_, t, c)| 0.2 + 0.3 * t as f64 + 0.1 * c as f64);
    let loss_of = |store: &ParamStore| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let out = field.forward_batch(&mut g, store, coords.view(), &[0, 1]).unwrap();
        let sq = g.mul(out, out);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        (g.value(loss)[[]], flat_grads(&g, &grads, store))
    };
    let (_, analytic) = loss_of(&store);
    let flat = flat_params(&store);
    let f = |p: &[f64]| {
        let mut s = store.clone();
        set_flat(&mut s, p);
        loss_of(&s).0
    };
    let report = fd_gradcheck(f, &flat, &analytic, 1e-5, None).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn coordinate_mlp_shapes_for_every_encoder() {
    let x = arr2(&[[0.0, 0.1], [0.5, 0.2], [0.9, 0.3]]);
    for kind in [EncoderKind::Rff, EncoderKind::Siren, EncoderKind::Linear] {
        let mut store = ParamStore::new();
        let mlp = CoordinateMlp::new(kind, 2, 16, 8, 10.0, 30.0, &mut store, &mut rng(0)).unwrap();
        let mut g = Graph::new();
        let out = mlp.forward(&mut g, &store, x.view());
        assert_eq!(g.shape(out), &[3, 1]);
        assert!(g.value(out).iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #[test]
    fn rff_has_squared_norm_m(t in 0.0f64..1.0, d in 0.0f64..1.0, seed in 0u64..50) {
        let e = RffEncoder::from_seed(64, 2, 10.0, seed);
        let v = e.encode(&[t, d]);
        let n2: f64 = v.iter().map(|x| x * x).sum();
        prop_assert!((n2 - 64.0).abs() < 1e-9);
    }

    #[test]
    fn field_output_is_finite(t in 0.0f64..=1.0, d in 0.0f64..=1.0) {
        let mut store = ParamStore::new();
        let field = ConditionalNeuralField::new(small_config(), 4, &mut store, "cnf", &mut rng(3)).unwrap();
        let c = arr2(&[[t, d]]);
        let out = field.evaluate(&store, c.view(), &[0, 1, 2, 3]).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn rff_frequencies_replay_from_seed() {
    let a = RffEncoder::from_seed(64, 2, 10.0, 42);
    let b = RffEncoder::from_seed(64, 2, 10.0, 42);
    assert!(a.frequencies.iter().zip(b.frequencies.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn rff_half_period_example() {
    let e = RffEncoder::from_frequencies(arr2(&[[1.0, 0.0]]));
    let v = e.encode(&[0.5, 0.9]);
    assert_abs_diff_eq!(v[0], -1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
}

#[test]
fn linear_identity_encoder_passes_through() {
    let mut store = ParamStore::new();
    let spec = EncoderSpec { kind: EncoderKind::Linear, input_dim: 2, output_dim: 2, sigma: 0.0, omega0: 0.0 };
    let enc = make_encoder(&spec, &mut store, "e", &mut rng(0)).unwrap();
    let InputEncoder::Linear { w, b, .. } = enc else { panic!() };
    store.value_mut(w).assign(&ndarray::Array2::<f64>::eye(2).into_dyn());
    store.value_mut(b).fill(0.0);
    let x = arr2(&[[0.3, 0.8]]);
    let mut g = Graph::new();
    let out = enc.forward(&mut g, &store, x.view());
    assert_eq!(g.value(out).as_slice().unwrap(), &[0.3, 0.8]);
}

#[test]
fn siren_quarter_phase_gives_ones() {
    let mut store = ParamStore::new();
    let spec = EncoderSpec { kind: EncoderKind::Siren, input_dim: 2, output_dim: 3, sigma: 0.0, omega0: 30.0 };
    let enc = make_encoder(&spec, &mut store, "e", &mut rng(0)).unwrap();
    let InputEncoder::Siren { w, b, .. } = enc else { panic!() };
    store.value_mut(w).fill(0.0);
    store.value_mut(b).fill(std::f64::consts::FRAC_PI_2 / 30.0);
    let x = arr2(&[[0.3, 0.8], [0.0, 1.0]]);
    let mut g = Graph::new();
    let out = enc.forward(&mut g, &store, x.view());
    assert!(g.value(out).iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn zero_weights_give_final_bias() {
    let mut store = ParamStore::new();
    let field = ConditionalNeuralField::new(small_config(), 1, &mut store, "cnf", &mut rng(4)).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.value_mut(id).fill(0.0);
    }
    let last_b = field.layers.last().unwrap().1;
    store.value_mut(last_b).fill(0.7);
    let out = field.evaluate(&store, arr2(&[[0.4, 0.2]]).view(), &[0]).unwrap();
    assert!(out.iter().all(|&v| v == 0.7));
}

#[test]
fn outputs_repeat_weekly_and_for_equal_coords() {
    use crate::timefeatures::coords_for_window;
    use chrono::{Duration, NaiveDate};
    let mut store = ParamStore::new();
    let field = ConditionalNeuralField::new(small_config(), 2, &mut store, "cnf", &mut rng(5)).unwrap();
    let t0 = NaiveDate::from_ymd_opt(2024, 3, 6).unwrap().and_hms_opt(7, 35, 0).unwrap();
    let stamps = [t0, t0 + Duration::days(7), t0 + Duration::days(14)];
    let coords = coords_for_window(&stamps, false);
    let out = field.evaluate(&store, coords.view(), &[0, 1]).unwrap();
    for t in 1..3 {
        for n in 0..2 {
            for d in 0..2 {
                assert_eq!(out[[t, n, d]].to_bits(), out[[0, n, d]].to_bits());
            }
        }
    }
}
