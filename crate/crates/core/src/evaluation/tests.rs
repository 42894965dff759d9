use super::*;
use crate::conv::ConvConfig;
use crate::data::{synthesize_seasonal, SyntheticSpec};
use crate::experiment::{prepare, DataConfig};
use crate::field::FieldConfig;
use crate::graph::GraphConfig;
use crate::model::ModelKind;
use crate::testutil::rng;
use ndarray::Array3;
use proptest::prelude::*;
use rand::Rng;
use seafield_oracles::{loop_metric, MetricKind};

fn random_grid(seed: u64) -> (Array3<f64>, Array3<f64>, Array3<bool>) {
    let mut r = rng(seed);
    let p = Array3::from_shape_fn((5, 3, 12), |_| r.random_range(0.1..10.0));
    let y = Array3::from_shape_fn((5, 3, 12), |_| r.random_range(0.1..10.0));
    let m = Array3::from_shape_fn((5, 3, 12), |_| r.random_bool(0.8));
    (p, y, m)
}

#[test]
fn perfect_predictions_score_zero_everywhere() {
    let (_, y, m) = random_grid(0);
    let rep = evaluate_predictions(y.view(), y.view(), m.view(), &REPORT_HORIZONS).unwrap();
    assert_eq!(rep.rows.iter().map(|r| r.horizon.unwrap()).collect::<Vec<_>>(), vec![3, 6, 12]);
    for r in &rep.rows {
        for metric in Metric::ALL {
            assert_eq!(r.get(metric), 0.0);
        }
    }
}

#[test]
fn horizon_rows_match_loop_oracle() {
    let (p, y, m) = random_grid(1);
    let rep = evaluate_predictions(p.view(), y.view(), m.view(), &REPORT_HORIZONS).unwrap();
    for row in &rep.rows {
        let h = row.horizon.unwrap() - 1;
        let (mut ps, mut ys, mut ms) = (vec![], vec![], vec![]);
        for w in 0..5 {
            for n in 0..3 {
                ps.push(p[[w, n, h]]);
                ys.push(y[[w, n, h]]);
                ms.push(m[[w, n, h]]);
            }
        }
        for (metric, kind) in [
            (Metric::Mae, MetricKind::Mae),
            (Metric::Rmse, MetricKind::Rmse),
            (Metric::Mape, MetricKind::Mape),
            (Metric::Smape, MetricKind::Smape),
        ] {
            let want = loop_metric(kind, &ps, &ys, &ms).unwrap();
            assert!((row.get(metric) - want).abs() <= 1e-12);
        }
    }
    assert!(evaluate_predictions(p.view(), y.view(), m.view(), &[13]).is_err());
    assert!(evaluate_predictions(p.view(), y.view(), m.view(), &[0]).is_err());
}

#[test]
fn constant_mean_predictor_on_synthetic_data() {
    let ds = synthesize_seasonal(&SyntheticSpec { nodes: 3, days: 14, granularity_minutes: 60, noise_std: 0.1, seed: 2 })
        .unwrap();
    let data = prepare(&ds, &DataConfig::default()).unwrap();
    let (target, mask) = targets(&data.test);
    let pred = Array3::from_elem(target.raw_dim(), data.stats.mean);
    let rep = evaluate_predictions(pred.view(), target.view(), mask.view(), &[12]).unwrap();
    let (mut ps, mut ys, mut ms) = (vec![], vec![], vec![]);
    for w in 0..target.shape()[0] {
        for n in 0..3 {
            ps.push(data.stats.mean);
            ys.push(target[[w, n, 11]]);
            ms.push(mask[[w, n, 11]]);
        }
    }
    let want = loop_metric(MetricKind::Mae, &ps, &ys, &ms).unwrap();
    assert!((rep.at(12).unwrap().mae - want).abs() <= 1e-12);
}

#[test]
fn summary_and_csv() {
    let s = summarize(&[1.0, 2.0, 3.0]);
    assert_eq!((s.mean, s.std, s.min, s.max, s.count), (2.0, 1.0, 1.0, 3.0, 3));
    assert_eq!(summarize(&[4.0]).std, 0.0);
    let row = |h, v| MetricRow { horizon: h, mae: v, rmse: v, mape: v, smape: v };
    let table = aggregate("m", &[row(Some(3), 1.0), row(None, 5.0), row(Some(3), 3.0), row(None, 7.0)]);
    assert_eq!(table.len(), 8);
    assert_eq!(table[0].horizon, Some(3));
    assert_eq!(table[0].summary.mean, 2.0);
    assert_eq!(table[4].horizon, None);
    assert_eq!(table[4].summary.mean, 6.0);
    let csv = summary_csv(&table[..1]);
    assert_eq!(csv, format!("label,horizon,metric,mean,std,count\nm,3,mae,2,{},2\n", 2f64.sqrt()));
    assert!(summary_csv(&table[4..5]).contains("m,all,mae,6,"));
}

proptest! {
    #[test]
    fn mean_lies_between_extremes(values in proptest::collection::vec(0.0f64..100.0, 1..10)) {
        let s = summarize(&values);
        prop_assert!(s.min - 1e-12 <= s.mean && s.mean <= s.max + 1e-12);
        prop_assert!(s.std >= 0.0);
    }
}

#[test]
fn parallel_map_keeps_order_and_errors() {
    let items: Vec<u64> = (0..17).collect();
    let one = run_parallel(&items, 1, |&x| Ok(x * x)).unwrap();
    let four = run_parallel(&items, 4, |&x| Ok(x * x)).unwrap();
    assert_eq!(one, four);
    let err = run_parallel(&items, 3, |&x| if x == 9 { Err(Error::EmptyLoss) } else { Ok(x) });
    assert!(matches!(err, Err(Error::EmptyLoss)));
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        kind: ModelKind::Seagnn,
        conv: ConvConfig { channels: 4, modules: 1, out_hidden: 4, ..ConvConfig::default() },
        graph: GraphConfig {
            residual_channels: 4,
            conv_channels: 4,
            skip_channels: 4,
            end_channels: 4,
            embed_dim: 4,
            modules: 1,
            ..GraphConfig::default()
        },
        field: FieldConfig { hidden: 8, out_dim: 4, time_frequencies: 4, node_frequencies: 2, layers: 2, ..FieldConfig::default() },
        ..ModelConfig::default()
    }
}

#[test]
fn ablation_full_variant_equals_plain_run() {
    let ds = synthesize_seasonal(&SyntheticSpec { nodes: 3, days: 14, granularity_minutes: 60, noise_std: 0.1, seed: 3 })
        .unwrap();
    let data = prepare(&ds, &DataConfig::default()).unwrap();
    let train = TrainConfig { epochs: 1, batch_size: 32, curriculum: false, ..TrainConfig::default() };
    let res = run_ablation(&data, &tiny_model(), &[AblationVariant::Full, AblationVariant::NoLgf], &[5], &train, 2).unwrap();
    let plain = run(&data, &tiny_model(), &train, 5, |_| {}).unwrap();
    assert_eq!(res.runs[0].2, plain.val_all);
    assert_eq!(res.mean_mae(AblationVariant::Full), Some(plain.val_all.mae));
    assert_eq!(res.runs.len(), 2);
    assert!(res.mean_mae(AblationVariant::NoLgf).unwrap().is_finite());
    assert_eq!(res.table.len(), 8);
}

#[test]
fn reconstruction_rows_and_errors() {
    let ds = synthesize_seasonal(&SyntheticSpec { nodes: 2, days: 14, granularity_minutes: 120, noise_std: 0.1, seed: 4 })
        .unwrap();
    let cfg = ReconstructionConfig { hidden: 16, iterations: 30, rff_frequencies: 8, learning_rate: 1e-2, ..ReconstructionConfig::default() };
    let ids = vec![ds.node_ids[1].clone()];
    let kinds = [EncoderKind::Rff, EncoderKind::Siren, EncoderKind::Linear];
    let rows = reconstruction_experiment(&ds, &ids, &kinds, &[0, 1], &cfg, 2).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.per_seed.len(), 2);
        assert!(r.summary.mean.is_finite() && r.summary.mean >= 0.0);
    }
    let err = reconstruction_experiment(&ds, &["nope".to_owned()], &kinds, &[0], &cfg, 1);
    assert!(matches!(err, Err(Error::Unknown { what: "node", .. })));
    assert!(reconstruction_csv(&rows).starts_with("node,kind,mean,std,count\n"));
}

#[test]
fn fitting_lowers_the_reconstruction_error() {
    let ds = synthesize_seasonal(&SyntheticSpec { nodes: 1, days: 14, granularity_minutes: 120, noise_std: 0.0, seed: 5 })
        .unwrap();
    let (coords, series, mask) = reconstruction_series(&ds, &ds.node_ids[0]).unwrap();
    let base = ReconstructionConfig { hidden: 32, rff_frequencies: 16, learning_rate: 1e-2, ..ReconstructionConfig::default() };
    let before = fit_series(&coords, &series, &mask, EncoderKind::Rff, 0, &ReconstructionConfig { iterations: 0, ..base }).unwrap();
    let after = fit_series(&coords, &series, &mask, EncoderKind::Rff, 0, &ReconstructionConfig { iterations: 200, ..base }).unwrap();
    assert!(after.final_mae < 0.5 * before.final_mae, "{} vs {}", after.final_mae, before.final_mae);
    // the series is z-scored over observed cells
    let mean: f64 = series.iter().sum::<f64>() / series.len() as f64;
    assert!(mean.abs() < 1e-9);
}
