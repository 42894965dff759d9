//! One training run from a dataset to evaluated best-validation parameters.

use crate::autograd::ParamStore;
use crate::data::{split, InputChannels, NormStats, SplitSpec, TimeSeriesDataset};
use crate::error::Result;
use crate::evaluation::{evaluate_predictions, pooled, MetricRow, MetricsReport, REPORT_HORIZONS};
use crate::model::{DataShape, ForecastModel, ModelConfig};
use crate::training::{predict, targets, train_with, EpochRecord, TrainConfig, TrainOutcome, WindowSet};
use ndarray::Array2;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub history: usize,
    pub horizon: usize,
    pub channels: InputChannels,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { history: 12, horizon: 12, channels: InputChannels::TimeOfDay, split: SplitSpec::road() }
    }
}

/// Window sets for the three splits, normalized with training statistics.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub stats: NormStats,
    pub adjacency: Option<Array2<f64>>,
    pub node_ids: Vec<String>,
}

impl Prepared {
    pub fn shape(&self) -> DataShape {
        DataShape {
            nodes: self.node_ids.len(),
            input_channels: self.train.channels.count(),
            history: self.train.history,
            horizon: self.train.horizon,
        }
    }
}

pub fn prepare(dataset: &TimeSeriesDataset, config: &DataConfig) -> Result<Prepared> {
    let splits = split(dataset, &config.split, config.history + config.horizon)?;
    let stats = NormStats::fit(splits.train.values.view(), splits.train.mask.view())?;
    let make = |d: &TimeSeriesDataset| WindowSet::new(d, stats, config.history, config.horizon, config.channels);
    Ok(Prepared {
        train: make(&splits.train)?,
        val: make(&splits.val)?,
        test: make(&splits.test)?,
        stats,
        adjacency: dataset.adjacency.clone(),
        node_ids: dataset.node_ids.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub model: ForecastModel,
    /// Best-validation parameters.
    pub store: ParamStore,
    pub outcome: TrainOutcome,
    /// Validation metrics pooled over horizons 1 to T_f.
    pub val_all: MetricRow,
    /// Test metrics at the reporting horizons.
    pub test: MetricsReport,
}

impl RunResult {
    pub fn history(&self) -> &[EpochRecord] {
        &self.outcome.history
    }
}

/// Builds the model from `seed`, trains with `seed` and evaluates the
/// best-validation parameters.
pub fn run(
    data: &Prepared,
    model: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    let (net, mut store) = ForecastModel::build(model, data.shape(), data.adjacency.as_ref(), seed)?;
    let cfg = TrainConfig { seed, ..train.clone() };
    let outcome = train_with(&net, &mut store, &data.train, &data.val, &cfg, on_epoch)?;
    let pred = predict(&net, &store, &data.val, cfg.batch_size)?;
    let (target, mask) = targets(&data.val);
    let val_all = pooled(pred.view(), target.view(), mask.view())?;
    let horizons: Vec<usize> = REPORT_HORIZONS.into_iter().filter(|&h| h <= data.test.horizon).collect();
    let pred = predict(&net, &store, &data.test, cfg.batch_size)?;
    let (target, mask) = targets(&data.test);
    let test = evaluate_predictions(pred.view(), target.view(), mask.view(), &horizons)?;
    Ok(RunResult { seed, model: net, store, outcome, val_all, test })
}
