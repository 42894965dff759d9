use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use seafield::autograd::Graph;
use seafield::conv::ConvConfig;
use seafield::data::synthesize_seasonal;
use seafield::experiment::prepare;
use seafield::field::FieldConfig;
use seafield::graph::GraphConfig;
use seafield::nn::Mode;
use seafield::training::{forward_denormalized, masked_mae_loss};
use seafield::{DataConfig, ForecastModel, ModelConfig, ModelKind, SyntheticSpec};
use std::hint::black_box;

fn train_step(c: &mut Criterion) {
    let ds = synthesize_seasonal(&SyntheticSpec { nodes: 20, days: 14, granularity_minutes: 30, noise_std: 0.1, seed: 0 })
        .unwrap();
    let data = prepare(&ds, &DataConfig::default()).unwrap();
    let base = ModelConfig {
        conv: ConvConfig { channels: 16, modules: 3, out_hidden: 32, ..ConvConfig::default() },
        graph: GraphConfig { residual_channels: 16, conv_channels: 16, skip_channels: 32, end_channels: 64, ..GraphConfig::default() },
        field: FieldConfig { hidden: 64, out_dim: 16, ..FieldConfig::default() },
        ..ModelConfig::default()
    };
    let starts: Vec<usize> = (0..16).collect();
    let batch = data.train.batch(&starts);

    let mut group = c.benchmark_group("train_step_b16");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        let (model, store) = ForecastModel::build(&ModelConfig { kind, ..base.clone() }, data.shape(), None, 0).unwrap();
        group.bench_function(BenchmarkId::from_parameter(kind.as_str()), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let y = forward_denormalized(&model, &mut g, &store, &batch, &data.stats, Mode::Train).unwrap();
                let loss = masked_mae_loss(&mut g, y, &batch.target, &batch.mask, 12).unwrap();
                black_box(g.backward(loss).params(&g))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
