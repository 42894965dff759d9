use super::*;
use crate::autograd::Tensor;
use crate::field::FieldConfig;
use crate::fusion::{AggregateMode, Aggregator, Placement};
use crate::testutil::{random, rng};
use ndarray::{Array3, ArrayD, IxDyn};
use seafield_oracles::conv_out_len;

fn tiny_field() -> FieldConfig {
    FieldConfig { time_frequencies: 4, node_frequencies: 2, hidden: 8, layers: 2, out_dim: 6, ..FieldConfig::default() }
}

fn global(mode: AggregateMode) -> GlobalConfig {
    GlobalConfig { field: tiny_field(), mode, placement: Placement::LayerWise }
}

fn small() -> ConvConfig {
    ConvConfig { channels: 8, modules: 2, kernels: DEFAULT_KERNELS.to_vec(), out_hidden: 6 }
}

fn coords(batch: usize, len: usize, seed: u64) -> Array3<f64> {
    let mut r = rng(seed);
    let t = random(&[batch, len, 2], 0.0, 1.0, &mut r);
    t.into_dimensionality().unwrap()
}

fn predict(model: &ConvForecaster, store: &ParamStore, x: &Tensor, c: &Array3<f64>, mode: Mode) -> Tensor {
    let mut g = Graph::new();
    let h = g.input(x.clone());
    let out = model.forward(&mut g, store, h, c.view(), mode).unwrap();
    g.value(out).clone()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn valid_inception_shrinks_by_six() {
    let mut r = rng(0);
    let mut store = ParamStore::new();
    let m = InceptionModule::new(&mut store, "m", &DEFAULT_KERNELS, 4, &mut r);
    let mut g = Graph::new();
    let x = g.input(random(&[2, 3, 12, 4], -1.0, 1.0, &mut r));
    let y = inception_forward(&m, &mut g, &store, x, Mode::Train).unwrap();
    assert_eq!(g.shape(y)[2], conv_out_len(12, 7, 1).unwrap());
    assert_eq!(g.shape(y)[2], 6);
    let short = g.input(ArrayD::zeros(IxDyn(&[1, 1, 6, 4])));
    assert!(matches!(
        inception_forward(&m, &mut g, &store, short, Mode::Train),
        Err(Error::WindowTooShort { .. })
    ));
}

#[test]
fn zero_branches_pass_the_residual() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let m = InceptionModule::new(&mut store, "m", &DEFAULT_KERNELS, 4, &mut r);
    for c in &m.inception.branches {
        store.value_mut(c.w).fill(0.0);
        store.value_mut(c.b).fill(0.0);
    }
    let x = random(&[2, 3, 12, 4], -1.0, 1.0, &mut r);
    for mode in [Mode::Train, Mode::Eval] {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = m.forward_valid(&mut g, &store, xv, mode).unwrap();
        let crop = x.slice(ndarray::s![.., .., 6.., ..]).to_owned().into_dyn();
        assert!(max_abs_diff(g.value(y), &crop) < 1e-12);
    }
}

#[test]
fn inception_module_parameter_count() {
    let mut store = ParamStore::new();
    InceptionModule::new(&mut store, "m", &DEFAULT_KERNELS, 32, &mut rng(0));
    // four branches of 8 output channels over 32 inputs, plus BN scale and shift
    let branches = (2 + 3 + 6 + 7) * 32 * 8 + 4 * 8;
    assert_eq!(store.num_trainable(), branches + 2 * 32);
}

#[test]
fn stack_keeps_length_and_shapes() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let cfg = ConvConfig { modules: 2, ..ConvConfig::default() };
    let model = ConvForecaster::new(cfg, None, 20, 2, 12, &mut store, &mut r).unwrap();
    let x = random(&[4, 20, 12, 2], -1.0, 1.0, &mut r);
    let out = predict(&model, &store, &x, &coords(4, 12, 0), Mode::Train);
    assert_eq!(out.shape(), &[4, 20, 12]);
}

#[test]
fn zero_input_and_biases_predict_zero() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let model = ConvForecaster::new(small(), None, 5, 2, 12, &mut store, &mut r).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).ends_with(".b") {
            store.value_mut(id).fill(0.0);
        }
    }
    let x = ArrayD::zeros(IxDyn(&[2, 5, 12, 2]));
    for mode in [Mode::Train, Mode::Eval] {
        let out = predict(&model, &store, &x, &coords(2, 12, 0), mode);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn eval_is_deterministic() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let model = ConvForecaster::new(small(), Some(&global(AggregateMode::Gated)), 5, 2, 12, &mut store, &mut r).unwrap();
    let x = random(&[2, 5, 12, 2], -1.0, 1.0, &mut r);
    let c = coords(2, 12, 1);
    let a = predict(&model, &store, &x, &c, Mode::Eval);
    let b = predict(&model, &store, &x, &c, Mode::Eval);
    assert_eq!(a, b);
}

fn paired(seed: u64) -> (ConvForecaster, ParamStore, ConvForecaster, ParamStore) {
    let mut store = ParamStore::new();
    let fused = ConvForecaster::new(small(), Some(&global(AggregateMode::Gated)), 5, 2, 12, &mut store, &mut rng(seed)).unwrap();
    let mut base_store = ParamStore::new();
    let base = ConvForecaster::new(small(), None, 5, 2, 12, &mut base_store, &mut rng(seed + 100)).unwrap();
    let copied = base_store.copy_matching(&store);
    assert_eq!(copied, base_store.len());
    (fused, store, base, base_store)
}

fn set_gate_bias(model: &ConvForecaster, store: &mut ParamStore, value: f64) {
    for site in &model.global.as_ref().unwrap().sites {
        let Aggregator::Gated(layer) = site.aggregator else { panic!() };
        store.value_mut(layer.b).fill(value);
    }
}

#[test]
fn saturated_local_gates_recover_the_baseline() {
    let (fused, mut store, base, base_store) = paired(5);
    set_gate_bias(&fused, &mut store, -20.0);
    let mut r = rng(6);
    for i in 0..5 {
        let x = random(&[3, 5, 12, 2], -2.0, 2.0, &mut r);
        let c = coords(3, 12, i);
        for mode in [Mode::Eval, Mode::Train] {
            let a = predict(&fused, &store, &x, &c, mode);
            let b = predict(&base, &base_store, &x, &c, mode);
            assert!(max_abs_diff(&a, &b) < 1e-5, "{}", max_abs_diff(&a, &b));
        }
    }
}

#[test]
fn saturated_global_gate_forwards_field_features() {
    let mut store = ParamStore::new();
    let cfg = ConvConfig { modules: 1, ..small() };
    let model = ConvForecaster::new(cfg, Some(&global(AggregateMode::Gated)), 4, 2, 12, &mut store, &mut rng(7)).unwrap();
    set_gate_bias(&model, &mut store, 20.0);
    let g_branch = model.global.as_ref().unwrap();
    let Aggregator::Gated(layer) = g_branch.sites[0].aggregator else { panic!() };
    store.value_mut(layer.w).fill(0.0);
    let mut r = rng(8);
    let x = random(&[2, 4, 12, 2], -1.0, 1.0, &mut r);
    let c = coords(2, 12, 3);
    let got = predict(&model, &store, &x, &c, Mode::Eval);

    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let h = model.start.forward(&mut g, &store, xv);
    let h = model.modules[0].forward(&mut g, &store, h, Mode::Eval).unwrap();
    let f = g_branch.features(&mut g, &store, c.view(), &[0, 1, 2, 3]).unwrap();
    let glob = g_branch.sites[0].global(&mut g, &store, h, f).unwrap();
    let last = g.slice(glob, 2, 11, 1);
    let expect = model.output.forward(&mut g, &store, last);
    assert!(max_abs_diff(&got, g.value(expect)) < 1e-6);
}

#[test]
fn fused_parameter_count_adds_field_and_sites() {
    let (_, store, _, base_store) = paired(9);
    let field = store.num_trainable_with_prefix("global.field");
    let c = small().channels;
    let d = tiny_field().out_dim;
    let per_site = (d * c + c) + (2 * c * c + c);
    assert_eq!(store.num_trainable(), base_store.num_trainable() + field + small().modules * per_site);
    let mut lone = ParamStore::new();
    crate::field::ConditionalNeuralField::new(tiny_field(), 5, &mut lone, "f", &mut rng(0)).unwrap();
    assert_eq!(field, lone.num_trainable());
}

#[test]
fn one_site_per_module() {
    let (fused, ..) = paired(10);
    let g = fused.global.as_ref().unwrap();
    assert_eq!(g.sites.len(), fused.modules.len());
    assert!((0..fused.modules.len()).all(|i| g.layer_site(i).is_some()));
    assert!(g.input_site().is_none());
}

#[test]
fn rejects_bad_shapes_and_configs() {
    let mut store = ParamStore::new();
    let model = ConvForecaster::new(small(), None, 5, 2, 12, &mut store, &mut rng(0)).unwrap();
    let mut g = Graph::new();
    let x = g.input(ArrayD::zeros(IxDyn(&[1, 4, 12, 2])));
    assert!(matches!(
        model.forward(&mut g, &store, x, coords(1, 12, 0).view(), Mode::Eval),
        Err(Error::Shape(_))
    ));
    let bad = ConvConfig { channels: 3, ..small() };
    assert!(ConvForecaster::new(bad, None, 5, 2, 12, &mut ParamStore::new(), &mut rng(0)).is_err());
}
