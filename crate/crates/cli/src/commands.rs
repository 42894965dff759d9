//! The five subcommands. Each writes into `config.out` and returns the first
//! error it meets.

use crate::config::{ConfigError, ExperimentConfig};
use crate::plot::{line_chart, Series};
use seafield::checkpoint::Checkpoint;
use seafield::data::{load_dataset, split, synthesize_seasonal, TimeSeriesDataset};
use seafield::evaluation::{
    ablation_table, aggregate_reports, evaluate_predictions, reconstruction_csv, reconstruction_experiment,
    run_parallel, summary_csv, MetricRow, MetricsReport, REPORT_HORIZONS,
};
use seafield::experiment::{prepare, run, RunResult};
use seafield::model::{DataShape, ForecastModel};
use seafield::training::{predict, targets, EpochRecord, WindowSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Written to every output directory.
pub const FORMAT_MARKER: &str = "seafield-output/1\n";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<seafield::Error> for CliError {
    fn from(e: seafield::Error) -> Self {
        match e {
            seafield::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn mkdir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

/// Resolved inputs shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: ExperimentConfig,
    pub jobs: usize,
    /// Root for relative dataset paths (`SEAFIELD_DATA_DIR`).
    pub data_root: Option<PathBuf>,
}

impl Context {
    pub fn new(config: ExperimentConfig) -> Self {
        Context { config, jobs: 1, data_root: None }
    }

    fn out(&self) -> &Path {
        &self.config.out
    }

    pub fn dataset(&self) -> CliResult<TimeSeriesDataset> {
        match self.config.data_dir(self.data_root.as_deref()) {
            Some(dir) => Ok(load_dataset(&dir)?),
            None => Ok(synthesize_seasonal(&self.config.synthetic)?),
        }
    }

    /// Config text, seeds and format marker.
    fn write_markers(&self, dir: &Path, config: &ExperimentConfig) -> CliResult<()> {
        mkdir(dir)?;
        write(&dir.join("config.txt"), &config.to_text())?;
        let seeds: Vec<String> = config.seeds.iter().map(|s| s.to_string()).collect();
        write(&dir.join("seed.txt"), &format!("{}\n", seeds.join(",")))?;
        write(&dir.join("FORMAT"), FORMAT_MARKER)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_mae,horizon,iterations\n");
    for r in history {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_mae, r.horizon, r.iterations).unwrap();
    }
    out
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("horizon,mae,rmse,mape,smape\n");
    for r in rows {
        let h = r.horizon.map_or("all".to_owned(), |h| h.to_string());
        writeln!(out, "{h},{},{},{},{}", r.mae, r.rmse, r.mape, r.smape).unwrap();
    }
    out
}

fn history_plot(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let val = Series { label: "validation MAE", points: history.iter().map(|r| (r.epoch as f64, r.val_mae)).collect() };
    let train = Series { label: "training loss", points: history.iter().map(|r| (r.epoch as f64, r.train_loss)).collect() };
    line_chart(path, "Validation curve", "epoch", "MAE", &[val, train]).map_err(CliError::Runtime)
}

/// Trains one model per seed; each seed gets `seed-<s>/` with a checkpoint,
/// history, test metrics and validation curve. `summary.csv` aggregates the
/// test metrics over seeds.
pub fn cmd_train(ctx: &Context) -> CliResult<Vec<RunResult>> {
    let cfg = &ctx.config;
    cfg.train.validate()?;
    let data = prepare(&ctx.dataset()?, &cfg.data)?;
    ctx.write_markers(ctx.out(), cfg)?;
    let runs = run_parallel(&cfg.seeds, ctx.jobs, |&seed| {
        run(&data, &cfg.model, &cfg.train, seed, |r| {
            eprintln!("seed {seed} epoch {} loss {:.5} val_mae {:.5} horizon {}", r.epoch, r.train_loss, r.val_mae, r.horizon)
        })
    })?;
    for r in &runs {
        let dir = ctx.out().join(format!("seed-{}", r.seed));
        let single = ExperimentConfig { seeds: vec![r.seed], ..cfg.clone() };
        ctx.write_markers(&dir, &single)?;
        let best = &r.outcome.best;
        let text = single.to_text();
        let ck = Checkpoint::new(&text, r.seed, best.iteration, best.epoch, data.stats, r.store.clone(), best.optimizer.clone());
        ck.save(&dir.join("checkpoint.seafield"))?;
        write(&dir.join("history.csv"), &history_csv(r.history()))?;
        write(&dir.join("metrics.csv"), &metrics_csv(&r.test.rows))?;
        history_plot(&dir.join("validation.svg"), r.history())?;
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.test.clone()).collect();
    write(&ctx.out().join("summary.csv"), &summary_csv(&aggregate_reports(cfg.model.kind.as_str(), &reports)))?;
    Ok(runs)
}

/// Scores a checkpoint on the test split and draws forecast overlays.
/// Without an explicit config the one stored in the checkpoint is used.
pub fn cmd_evaluate(ctx: &Context, checkpoint: &Path, explicit_config: bool) -> CliResult<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = if explicit_config { ctx.config.clone() } else { ExperimentConfig::parse(&ck.config_text)? };
    cfg.out = ctx.config.out.clone();
    let ctx = Context { config: cfg, ..ctx.clone() };
    let cfg = &ctx.config;
    let dataset = ctx.dataset()?;
    let d = &cfg.data;
    let splits = split(&dataset, &d.split, d.history + d.horizon)?;
    // normalize with the statistics the model was trained on
    let test = WindowSet::new(&splits.test, ck.stats, d.history, d.horizon, d.channels)?;
    let shape = DataShape { nodes: dataset.num_nodes(), input_channels: d.channels.count(), history: d.history, horizon: d.horizon };
    let (model, mut store) = ForecastModel::build(&cfg.model, shape, dataset.adjacency.as_ref(), ck.seed)?;
    ck.restore_into(&mut store)?;
    let pred = predict(&model, &store, &test, cfg.train.batch_size)?;
    let (target, mask) = targets(&test);
    let horizons: Vec<usize> = REPORT_HORIZONS.into_iter().filter(|&h| h <= d.horizon).collect();
    let report = evaluate_predictions(pred.view(), target.view(), mask.view(), &horizons)?;
    ctx.write_markers(ctx.out(), cfg)?;
    write(&ctx.out().join("metrics.csv"), &metrics_csv(&report.rows))?;

    let nodes = if cfg.plot_nodes.is_empty() { vec![dataset.node_ids[0].clone()] } else { cfg.plot_nodes.clone() };
    for id in &nodes {
        let n = dataset.node_index(id).ok_or_else(|| CliError::Runtime(format!("unknown node '{id}'")))?;
        let windows = pred.shape()[0];
        let truth: Vec<(f64, f64)> = (0..windows)
            .map(|w| (w as f64, if mask[[w, n, 0]] { target[[w, n, 0]] } else { f64::NAN }))
            .collect();
        let labels: Vec<String> = horizons.iter().map(|h| format!("{h}-step forecast")).collect();
        let mut series = vec![Series { label: "observed", points: truth }];
        for (h, label) in horizons.iter().zip(&labels) {
            let points = (0..windows).map(|w| ((w + h - 1) as f64, pred[[w, n, h - 1]])).collect();
            series.push(Series { label, points });
        }
        let file = format!("predictions_{}.svg", sanitize(id));
        line_chart(&ctx.out().join(file), &format!("Node {id}"), "test step", "value", &series)
            .map_err(CliError::Runtime)?;
    }
    Ok(report)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Every ablation variant under every seed. Runs write `runs/<variant>-seed<s>/`;
/// `ablation.csv` summarizes pooled validation metrics and
/// `ablation_test.csv` the test metrics at the reporting horizons.
pub fn cmd_ablate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    cfg.train.validate()?;
    if cfg.variants.is_empty() {
        return Err(CliError::Config("ablation.variants is empty".into()));
    }
    let data = prepare(&ctx.dataset()?, &cfg.data)?;
    ctx.write_markers(ctx.out(), cfg)?;
    let tasks: Vec<_> = cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let runs = run_parallel(&tasks, ctx.jobs, |&(variant, seed)| {
        let r = run(&data, &variant.apply(&cfg.model), &cfg.train, seed, |_| {})?;
        eprintln!("{} seed {seed}: val MAE {:.5}", variant.as_str(), r.val_all.mae);
        Ok(r)
    })?;
    let mut test_rows = Vec::new();
    for (&(variant, seed), r) in tasks.iter().zip(&runs) {
        let dir = ctx.out().join("runs").join(format!("{}-seed{seed}", variant.as_str()));
        mkdir(&dir)?;
        write(&dir.join("history.csv"), &history_csv(r.history()))?;
        let mut rows = vec![r.val_all];
        rows.extend(r.test.rows.iter().cloned());
        write(&dir.join("metrics.csv"), &metrics_csv(&rows))?;
        test_rows.push((variant, r.test.clone()));
    }
    let table = ablation_table(tasks.iter().zip(&runs).map(|(&(v, s), r)| (v, s, r.val_all)).collect());
    write(&ctx.out().join("ablation.csv"), &summary_csv(&table.table))?;
    let mut test_table = Vec::new();
    for &v in &cfg.variants {
        let reports: Vec<MetricsReport> = test_rows.iter().filter(|(tv, _)| *tv == v).map(|(_, r)| r.clone()).collect();
        test_table.extend(aggregate_reports(v.as_str(), &reports));
    }
    write(&ctx.out().join("ablation_test.csv"), &summary_csv(&test_table))
}

/// Fits each encoder kind to each requested node of the training split.
pub fn cmd_reconstruct(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    if cfg.reconstruct_kinds.is_empty() {
        return Err(CliError::Config("reconstruct.kinds is empty".into()));
    }
    let dataset = ctx.dataset()?;
    let d = &cfg.data;
    let train = split(&dataset, &d.split, d.history + d.horizon)?.train;
    let nodes = if cfg.reconstruct_nodes.is_empty() { vec![dataset.node_ids[0].clone()] } else { cfg.reconstruct_nodes.clone() };
    let rows = reconstruction_experiment(&train, &nodes, &cfg.reconstruct_kinds, &cfg.seeds, &cfg.reconstruct, ctx.jobs)?;
    ctx.write_markers(ctx.out(), cfg)?;
    write(&ctx.out().join("reconstruction.csv"), &reconstruction_csv(&rows))?;
    for id in &nodes {
        let mine: Vec<_> = rows.iter().filter(|r| &r.node == id).collect();
        let fit = &mine[0].first_fit;
        let truth = fit.target.iter().zip(&fit.mask).enumerate();
        let mut series =
            vec![Series { label: "observed", points: truth.map(|(t, (&v, &m))| (t as f64, if m { v } else { f64::NAN })).collect() }];
        for r in &mine {
            let points = r.first_fit.fitted.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect();
            series.push(Series { label: r.kind.as_str(), points });
        }
        let file = format!("reconstruction_{}.svg", sanitize(id));
        line_chart(&ctx.out().join(file), &format!("Reconstruction of node {id}"), "step", "z-score", &series)
            .map_err(CliError::Runtime)?;
    }
    Ok(())
}

/// Writes the synthetic dataset described by `synthetic.*` to the output directory.
pub fn cmd_synthesize(ctx: &Context) -> CliResult<()> {
    let ds = synthesize_seasonal(&ctx.config.synthetic)?;
    ds.write(ctx.out())?;
    ctx.write_markers(ctx.out(), &ctx.config)
}
