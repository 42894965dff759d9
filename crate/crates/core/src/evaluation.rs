//! Horizon-wise metric tables, multi-seed aggregation, the ablation harness
//! and the coordinate-MLP reconstruction experiment.

use crate::autograd::{Adam, AdamConfig, Graph, ParamStore};
use crate::data::{NormStats, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::experiment::{run, Prepared, RunResult};
use crate::field::{CoordinateMlp, EncoderKind};
use crate::metrics::Metric;
use crate::model::{AblationVariant, ForecastModel, ModelConfig};
use crate::timefeatures::coords_for_window;
use crate::training::{predict, targets, TrainConfig, WindowSet};
use ndarray::{s, Array2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Steps reported in result tables (15, 30 and 60 minutes at 5-minute data).
pub const REPORT_HORIZONS: [usize; 3] = [3, 6, 12];

/// All four metrics for one horizon step, or pooled over every step when
/// `horizon` is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub horizon: Option<usize>,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub smape: f64,
}

impl MetricRow {
    pub fn compute(
        horizon: Option<usize>,
        pred: ArrayView3<f64>,
        target: ArrayView3<f64>,
        mask: ArrayView3<bool>,
    ) -> Result<Self> {
        Ok(MetricRow {
            horizon,
            mae: Metric::Mae.compute(pred, target, mask)?,
            rmse: Metric::Rmse.compute(pred, target, mask)?,
            mape: Metric::Mape.compute(pred, target, mask)?,
            smape: Metric::Smape.compute(pred, target, mask)?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Mape => self.mape,
            Metric::Smape => self.smape,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn at(&self, horizon: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.horizon == Some(horizon))
    }
}

/// Metrics at the given 1-based steps. Arrays are `[windows, N, T_f]` on the
/// raw scale.
pub fn evaluate_predictions(
    pred: ArrayView3<f64>,
    target: ArrayView3<f64>,
    mask: ArrayView3<bool>,
    horizons: &[usize],
) -> Result<MetricsReport> {
    let tf = pred.shape()[2];
    let rows = horizons
        .iter()
        .map(|&h| {
            if h == 0 || h > tf {
                return Err(Error::Config(format!("horizon {h} outside 1..={tf}")));
            }
            let sl = s![.., .., h - 1..h];
            MetricRow::compute(Some(h), pred.slice(sl), target.slice(sl), mask.slice(sl))
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport { rows })
}

/// Metrics pooled over every horizon step.
pub fn pooled(pred: ArrayView3<f64>, target: ArrayView3<f64>, mask: ArrayView3<bool>) -> Result<MetricRow> {
    MetricRow::compute(None, pred, target, mask)
}

pub fn evaluate(
    model: &ForecastModel,
    store: &ParamStore,
    windows: &WindowSet,
    horizons: &[usize],
    batch_size: usize,
) -> Result<MetricsReport> {
    let pred = predict(model, store, windows, batch_size)?;
    let (target, mask) = targets(windows);
    evaluate_predictions(pred.view(), target.view(), mask.view(), horizons)
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        mean,
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        count: n,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub horizon: Option<usize>,
    pub metric: Metric,
    pub summary: Summary,
}

/// Aggregates rows that share a horizon across seeds, in first-seen order.
pub fn aggregate(label: &str, rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut horizons: Vec<Option<usize>> = Vec::new();
    for r in rows {
        if !horizons.contains(&r.horizon) {
            horizons.push(r.horizon);
        }
    }
    let mut out = Vec::new();
    for h in horizons {
        for metric in Metric::ALL {
            let values: Vec<f64> = rows.iter().filter(|r| r.horizon == h).map(|r| r.get(metric)).collect();
            out.push(SummaryRow { label: label.to_owned(), horizon: h, metric, summary: summarize(&values) });
        }
    }
    out
}

pub fn aggregate_reports(label: &str, reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let rows: Vec<MetricRow> = reports.iter().flat_map(|r| r.rows.iter().copied()).collect();
    aggregate(label, &rows)
}

/// `label,horizon,metric,mean,std,count`, pooled rows with horizon `all`.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("label,horizon,metric,mean,std,count\n");
    for r in rows {
        let h = r.horizon.map_or_else(|| "all".to_owned(), |h| h.to_string());
        let s = r.summary;
        writeln!(out, "{},{},{},{},{},{}", r.label, h, r.metric.as_str(), s.mean, s.std, s.count).unwrap();
    }
    out
}

/// Per-seed rows and the aggregate of one ablation study.
#[derive(Clone, Debug)]
pub struct AblationResult {
    pub runs: Vec<(AblationVariant, u64, MetricRow)>,
    pub table: Vec<SummaryRow>,
}

impl AblationResult {
    pub fn mean_mae(&self, variant: AblationVariant) -> Option<f64> {
        self.table
            .iter()
            .find(|r| r.label == variant.as_str() && r.metric == Metric::Mae)
            .map(|r| r.summary.mean)
    }
}

/// Builds the table from pooled validation rows of finished runs.
pub fn ablation_table(runs: Vec<(AblationVariant, u64, MetricRow)>) -> AblationResult {
    let mut variants: Vec<AblationVariant> = Vec::new();
    for (v, ..) in &runs {
        if !variants.contains(v) {
            variants.push(*v);
        }
    }
    let table = variants
        .iter()
        .flat_map(|v| {
            let rows: Vec<MetricRow> = runs.iter().filter(|r| r.0 == *v).map(|r| r.2).collect();
            aggregate(v.as_str(), &rows)
        })
        .collect();
    AblationResult { runs, table }
}

/// Trains every variant for every seed and reports validation metrics
/// pooled over all horizons. Up to `jobs` runs proceed at once.
pub fn run_ablation(
    data: &Prepared,
    base: &ModelConfig,
    variants: &[AblationVariant],
    seeds: &[u64],
    train: &TrainConfig,
    jobs: usize,
) -> Result<AblationResult> {
    let tasks: Vec<(AblationVariant, u64)> =
        variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let results = run_parallel(&tasks, jobs, |&(v, seed)| {
        run(data, &v.apply(base), train, seed, |_| {}).map(|r: RunResult| r.val_all)
    })?;
    Ok(ablation_table(tasks.iter().zip(results).map(|(&(v, s), row)| (v, s, row)).collect()))
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
pub fn run_parallel<T: Sync, U: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<U>>> = (0..items.len()).map(|_| None).collect();
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                done.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every task ran")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructionConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub rff_frequencies: usize,
    pub sigma: f64,
    pub omega0: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            hidden: 128,
            iterations: 2000,
            learning_rate: 1e-3,
            rff_frequencies: 64,
            sigma: 10.0,
            omega0: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionFit {
    /// MAE on the z-scored series after the last update.
    pub final_mae: f64,
    /// Fitted and observed series, z-scored.
    pub fitted: Vec<f64>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Fits a coordinate MLP to one z-scored series by full-batch Adam on MAE.
pub fn fit_series(
    coords: &Array2<f64>,
    series: &[f64],
    mask: &[bool],
    kind: EncoderKind,
    seed: u64,
    config: &ReconstructionConfig,
) -> Result<ReconstructionFit> {
    let rows = series.len();
    if coords.nrows() != rows || mask.len() != rows {
        return Err(Error::Shape(format!("{} coordinates for {rows} values", coords.nrows())));
    }
    let target = ndarray::ArrayD::from_shape_vec(vec![rows, 1], series.to_vec()).unwrap();
    let weights =
        ndarray::ArrayD::from_shape_vec(vec![rows, 1], mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
            .unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = CoordinateMlp::new(
        kind,
        coords.ncols(),
        config.hidden,
        config.rff_frequencies,
        config.sigma,
        config.omega0,
        &mut store,
        &mut rng,
    )?;
    let mut adam = Adam::new(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    for iteration in 0..config.iterations {
        let mut g = Graph::new();
        let y = mlp.forward(&mut g, &store, coords.view());
        let loss = g.masked_mae(y, target.clone(), weights.clone()).ok_or(Error::EmptyLoss)?;
        let value = g.value(loss).sum();
        if !value.is_finite() {
            return Err(Error::Diverged { iteration: iteration as u64, loss: value });
        }
        let grads = g.backward(loss).params(&g);
        adam.step(&mut store, &grads);
    }
    let mut g = Graph::new();
    let y = mlp.forward(&mut g, &store, coords.view());
    let fitted: Vec<f64> = g.value(y).iter().copied().collect();
    let m = ndarray::ArrayView1::from(mask);
    let final_mae = Metric::Mae.compute(ndarray::ArrayView1::from(&fitted[..]), ndarray::ArrayView1::from(series), m)?;
    Ok(ReconstructionFit { final_mae, fitted, target: series.to_vec(), mask: mask.to_vec() })
}

/// One z-scored univariate series with its `[tod, dow]` coordinates.
pub fn reconstruction_series(dataset: &TimeSeriesDataset, node_id: &str) -> Result<(Array2<f64>, Vec<f64>, Vec<bool>)> {
    let node = dataset
        .node_index(node_id)
        .ok_or_else(|| Error::Unknown { what: "node", name: node_id.into() })?;
    let values = dataset.values.column(node);
    let mask = dataset.mask.column(node);
    let stats = NormStats::fit(values.insert_axis(ndarray::Axis(1)), mask.insert_axis(ndarray::Axis(1)))?;
    let series = values.iter().zip(mask).map(|(&v, &m)| if m { stats.normalize(v) } else { 0.0 }).collect();
    Ok((coords_for_window(&dataset.timestamps, false), series, mask.to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionRow {
    pub node: String,
    pub kind: EncoderKind,
    pub per_seed: Vec<f64>,
    pub summary: Summary,
    /// The fit for the first seed, kept for plotting.
    pub first_fit: ReconstructionFit,
}

/// Final reconstruction MAE per (node, encoder kind), aggregated over seeds.
/// `dataset` should be the training split.
pub fn reconstruction_experiment(
    dataset: &TimeSeriesDataset,
    node_ids: &[String],
    kinds: &[EncoderKind],
    seeds: &[u64],
    config: &ReconstructionConfig,
    jobs: usize,
) -> Result<Vec<ReconstructionRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("reconstruction needs at least one seed".into()));
    }
    let series = node_ids
        .iter()
        .map(|id| reconstruction_series(dataset, id))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, EncoderKind, u64)> = (0..node_ids.len())
        .flat_map(|n| kinds.iter().flat_map(move |&k| seeds.iter().map(move |&s| (n, k, s))))
        .collect();
    let fits = run_parallel(&tasks, jobs, |&(n, kind, seed)| {
        let (coords, values, mask) = &series[n];
        fit_series(coords, values, mask, kind, seed, config)
    })?;
    let mut rows = Vec::new();
    for (n, id) in node_ids.iter().enumerate() {
        for &kind in kinds {
            let mine: Vec<&ReconstructionFit> = tasks
                .iter()
                .zip(&fits)
                .filter(|((tn, tk, _), _)| *tn == n && *tk == kind)
                .map(|(_, f)| f)
                .collect();
            let per_seed: Vec<f64> = mine.iter().map(|f| f.final_mae).collect();
            rows.push(ReconstructionRow {
                node: id.clone(),
                kind,
                summary: summarize(&per_seed),
                per_seed,
                first_fit: mine[0].clone(),
            });
        }
    }
    Ok(rows)
}

/// `node,kind,mean,std,count`.
pub fn reconstruction_csv(rows: &[ReconstructionRow]) -> String {
    let mut out = String::from("node,kind,mean,std,count\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.node, r.kind.as_str(), r.summary.mean, r.summary.std, r.summary.count).unwrap();
    }
    out
}

#[cfg(test)]
mod tests;
