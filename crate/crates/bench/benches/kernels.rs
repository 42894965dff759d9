use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seafield::autograd::Graph;
use seafield::field::RffEncoder;
use seafield::metrics::{mae, smape};
use std::hint::black_box;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    Array::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

fn inception_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[64, 20, 19, 16], &mut rng);
    let ws: Vec<_> = [2, 3, 6, 7].iter().map(|&k| random(&[k * 16, 4], &mut rng)).collect();
    let b = random(&[4], &mut rng);
    c.bench_function("multi_conv_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let branches: Vec<_> = ws.iter().map(|w| (g.input(w.clone()), Some(g.input(b.clone())))).collect();
            let y = g.multi_conv(xv, &branches, 1, 13);
            let loss = g.sum(y);
            black_box(g.backward(loss))
        })
    });
}

fn fourier_features(c: &mut Criterion) {
    let enc = RffEncoder::from_seed(256, 2, 10.0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_simple_fn((64 * 12, 2), || rng.random_range(0.0..1.0));
    c.bench_function("rff_encode_768x2", |b| b.iter(|| black_box(enc.encode_rows(x.view()))));
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pred = random(&[512, 20, 12], &mut rng);
    let target = random(&[512, 20, 12], &mut rng);
    let mask = target.mapv(|v| v > -0.8);
    c.bench_function("masked_mae", |b| b.iter(|| black_box(mae(pred.view(), target.view(), mask.view()).unwrap())));
    c.bench_function("masked_smape", |b| b.iter(|| black_box(smape(pred.view(), target.view(), mask.view()).unwrap())));
}

criterion_group!(benches, inception_conv, fourier_features, metrics);
criterion_main!(benches);
