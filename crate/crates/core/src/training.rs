//! Mini-batch training with a masked MAE loss and an optional horizon
//! curriculum.

use crate::autograd::{clip_grad_norm, Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::data::{make_windows, window_count, InputChannels, NormStats, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::model::ForecastModel;
use crate::nn::{apply_running_updates, Mode, BN_MOMENTUM};
use ndarray::{s, Array2, Array3, ArrayD, ArrayView3, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Supervised horizon `p(iter) = min(max_horizon, 1 + iter / step_every)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub step_every: u64,
    pub max_horizon: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule { step_every: 2500, max_horizon: 12 }
    }
}

impl CurriculumSchedule {
    pub fn horizon_at(&self, iteration: u64) -> usize {
        let p = 1 + iteration / self.step_every.max(1);
        p.min(self.max_horizon as u64) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub curriculum: bool,
    pub schedule: CurriculumSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 5.0,
            seed: 0,
            curriculum: true,
            schedule: CurriculumSchedule::default(),
        }
    }
}

impl TrainConfig {
    /// The 50-epoch scheme without curriculum.
    pub fn plain() -> Self {
        TrainConfig { epochs: 50, curriculum: false, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.clip_norm].iter().all(|v| *v > 0.0 && v.is_finite());
        if self.epochs == 0 || self.batch_size == 0 || !positive || self.schedule.step_every == 0 {
            return Err(Error::Config("epochs, batch size, learning rate, clip norm and step_every must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || self.schedule.max_horizon == 0 {
            return Err(Error::Config("weight decay must be nonnegative and max horizon positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// One assembled mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, N, T_h, C]`, value channel normalized.
    pub history: Tensor,
    /// `[B, T_h, 3]`: time of day, day of week, weekend flag.
    pub coords: Array3<f64>,
    /// `[B, N, T_f]` on the raw scale.
    pub target: Array3<f64>,
    pub mask: Array3<bool>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.target.shape()[0]
    }

    /// Coordinates restricted to the first `width` columns.
    pub fn coords(&self, width: usize) -> ArrayView3<'_, f64> {
        self.coords.slice(s![.., .., ..width])
    }
}

/// All sliding windows of one split, stored once as per-row arrays.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub history: usize,
    pub horizon: usize,
    pub stats: NormStats,
    pub channels: InputChannels,
    inputs: Array3<f64>,
    coords: Array2<f64>,
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl WindowSet {
    /// `split` is on the raw scale; inputs are normalized with `stats`.
    pub fn new(
        split: &TimeSeriesDataset,
        stats: NormStats,
        history: usize,
        horizon: usize,
        channels: InputChannels,
    ) -> Result<Self> {
        if split.len() < history + horizon || history == 0 || horizon == 0 {
            return Err(Error::WindowTooShort { needed: history + horizon, available: split.len() });
        }
        let (normalized, _) = crate::data::normalize(split, Some(stats))?;
        let (t, n, c) = (split.len(), split.num_nodes(), channels.count());
        let mut inputs = Array3::zeros((t, n, c));
        let mut coords = Array2::zeros((t, 3));
        for (row, w) in make_windows(&normalized, 1, 0, channels)?.enumerate() {
            inputs.slice_mut(s![row, .., ..]).assign(&w.history.index_axis(Axis(0), 0));
            let a = w.history_coords[0];
            coords[[row, 0]] = a.time_of_day;
            coords[[row, 1]] = a.day_of_week;
            coords[[row, 2]] = if a.weekend { 1.0 } else { 0.0 };
        }
        Ok(WindowSet {
            history,
            horizon,
            stats,
            channels,
            inputs,
            coords,
            values: split.values.clone(),
            mask: split.mask.clone(),
        })
    }

    pub fn len(&self) -> usize {
        window_count(self.values.nrows(), self.history, self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> usize {
        self.values.ncols()
    }

    /// Raw values and mask of the underlying split, `T × N`.
    pub fn series(&self) -> (&Array2<f64>, &Array2<bool>) {
        (&self.values, &self.mask)
    }

    /// Windows starting at the given rows.
    pub fn batch(&self, starts: &[usize]) -> Batch {
        let (b, n, th, tf, c) = (starts.len(), self.nodes(), self.history, self.horizon, self.channels.count());
        let mut history = ArrayD::zeros(IxDyn(&[b, n, th, c]));
        let mut coords = Array3::zeros((b, th, 3));
        let mut target = Array3::zeros((b, n, tf));
        let mut mask = Array3::from_elem((b, n, tf), false);
        for (i, &start) in starts.iter().enumerate() {
            assert!(start < self.len(), "window {start} out of range");
            let rows = self.inputs.slice(s![start..start + th, .., ..]);
            history
                .slice_mut(s![i, .., .., ..])
                .assign(&rows.permuted_axes([1, 0, 2]));
            coords.slice_mut(s![i, .., ..]).assign(&self.coords.slice(s![start..start + th, ..]));
            let ts = start + th;
            target.slice_mut(s![i, .., ..]).assign(&self.values.slice(s![ts..ts + tf, ..]).t());
            mask.slice_mut(s![i, .., ..]).assign(&self.mask.slice(s![ts..ts + tf, ..]).t());
        }
        Batch { history, coords, target, mask }
    }
}

/// Mean `|pred − target|` over observed cells of the first `p` horizons.
/// `pred`, `target` and `mask` are `[B, N, T_f]` on the raw scale.
pub fn masked_mae_loss(
    graph: &mut Graph,
    pred: Var,
    target: &Array3<f64>,
    mask: &Array3<bool>,
    p: usize,
) -> Result<Var> {
    let tf = target.shape()[2];
    if p == 0 || p > tf || graph.shape(pred) != target.shape() || target.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "loss horizon {p} against prediction {:?}, target {:?}",
            graph.shape(pred),
            target.shape()
        )));
    }
    let pred = if p < tf { graph.slice(pred, 2, 0, p) } else { pred };
    let target = target.slice(s![.., .., ..p]).to_owned().into_dyn();
    let mask = mask.slice(s![.., .., ..p]).mapv(|m| if m { 1.0 } else { 0.0 }).into_dyn();
    graph.masked_mae(pred, target, mask).ok_or(Error::EmptyLoss)
}

fn coord_width(model: &ForecastModel) -> usize {
    model.global().map_or(2, |g| g.field.config.coord_width())
}

/// Forward pass on the raw scale, `[B, N, T_f]`.
pub fn forward_denormalized(
    model: &ForecastModel,
    graph: &mut Graph,
    store: &ParamStore,
    batch: &Batch,
    stats: &NormStats,
    mode: Mode,
) -> Result<Var> {
    let x = graph.input(batch.history.clone());
    let y = model.forward(graph, store, x, batch.coords(coord_width(model)), mode)?;
    Ok(graph.affine(y, stats.std, stats.mean))
}

/// Raw-scale predictions for every window of `windows`, `[W, N, T_f]`.
pub fn predict(
    model: &ForecastModel,
    store: &ParamStore,
    windows: &WindowSet,
    batch_size: usize,
) -> Result<Array3<f64>> {
    let (w, n, tf) = (windows.len(), windows.nodes(), windows.horizon);
    let mut out = Array3::zeros((w, n, tf));
    let starts: Vec<usize> = (0..w).collect();
    for chunk in starts.chunks(batch_size.max(1)) {
        let batch = windows.batch(chunk);
        let mut graph = Graph::new();
        let y = forward_denormalized(model, &mut graph, store, &batch, &windows.stats, Mode::Eval)?;
        let y = graph.value(y).view().into_dimensionality::<ndarray::Ix3>().map_err(|e| Error::Shape(e.to_string()))?;
        out.slice_mut(s![chunk[0]..chunk[0] + chunk.len(), .., ..]).assign(&y);
    }
    Ok(out)
}

/// Targets and mask aligned with [`predict`].
pub fn targets(windows: &WindowSet) -> (Array3<f64>, Array3<bool>) {
    let starts: Vec<usize> = (0..windows.len()).collect();
    let b = windows.batch(&starts);
    (b.target, b.mask)
}

/// Masked MAE of `model` over all horizons of `windows`.
pub fn validation_mae(model: &ForecastModel, store: &ParamStore, windows: &WindowSet, batch_size: usize) -> Result<f64> {
    let pred = predict(model, store, windows, batch_size)?;
    let (target, mask) = targets(windows);
    crate::metrics::mae(pred.view(), target.view(), mask.view())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    /// Supervised horizon at the end of the epoch.
    pub horizon: usize,
    pub iterations: u64,
}

/// Parameters and optimizer state at one point of a run.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub store: ParamStore,
    pub optimizer: Adam,
    pub iteration: u64,
    pub epoch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// The epoch with the lowest validation MAE.
    pub best: Snapshot,
    pub skipped_batches: usize,
}

impl TrainOutcome {
    pub fn best_val_mae(&self) -> f64 {
        self.history[self.best.epoch - 1].val_mae
    }
}

/// Trains `store` in place and leaves it holding the best-validation
/// parameters.
pub fn train(
    model: &ForecastModel,
    store: &mut ParamStore,
    train_set: &WindowSet,
    val_set: &WindowSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, store, train_set, val_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &ForecastModel,
    store: &mut ParamStore,
    train_set: &WindowSet,
    val_set: &WindowSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::WindowTooShort { needed: train_set.history + train_set.horizon, available: 0 });
    }
    let horizon = model.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Adam::new(config.adam());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut iteration = 0u64;
    let mut skipped = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Snapshot> = None;
    let mut best_mae = f64::INFINITY;
    let p_at = |it: u64| if config.curriculum { config.schedule.horizon_at(it).min(horizon) } else { horizon };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.batch(chunk);
            let mut graph = Graph::new();
            let pred = forward_denormalized(model, &mut graph, store, &batch, &train_set.stats, Mode::Train)?;
            let loss = match masked_mae_loss(&mut graph, pred, &batch.target, &batch.mask, p_at(iteration)) {
                Ok(l) => l,
                Err(Error::EmptyLoss) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let value = graph.value(loss).sum();
            if !value.is_finite() {
                return Err(Error::Diverged { iteration, loss: value });
            }
            let grads = graph.backward(loss);
            let mut grads = grads.params(&graph);
            let norm = clip_grad_norm(&mut grads, config.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged { iteration, loss: norm });
            }
            optimizer.step(store, &grads);
            apply_running_updates(store, &graph.take_running_updates(), BN_MOMENTUM);
            loss_sum += value;
            steps += 1;
            iteration += 1;
        }
        let val_mae = validation_mae(model, store, val_set, config.batch_size)?;
        if !val_mae.is_finite() {
            return Err(Error::Diverged { iteration, loss: val_mae });
        }
        let record = EpochRecord {
            epoch,
            train_loss: if steps > 0 { loss_sum / steps as f64 } else { f64::NAN },
            val_mae,
            horizon: p_at(iteration.saturating_sub(1)),
            iterations: iteration,
        };
        on_epoch(&record);
        if val_mae < best_mae {
            best_mae = val_mae;
            best = Some(Snapshot { store: store.clone(), optimizer: optimizer.clone(), iteration, epoch });
        }
        history.push(record);
    }
    let best = best.expect("at least one epoch");
    *store = best.store.clone();
    Ok(TrainOutcome { history, best, skipped_batches: skipped })
}
