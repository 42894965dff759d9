//! Seasonality-aware spatio-temporal forecasting.
//!
//! Timestamps are turned into coordinates ([`timefeatures`]), a conditional
//! neural field maps `(coordinate, node)` pairs to global features
//! ([`field`]), and layer-wise gated fusion ([`fusion`]) mixes those into the
//! local features of a convolutional ([`conv`]) or graph-based ([`graph`])
//! forecaster.

pub mod autograd;
pub mod error;

pub use error::{Error, Result};
pub mod data;
pub mod timefeatures;
pub mod field;
pub mod fusion;
pub mod nn;
pub mod conv;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod training;
pub mod checkpoint;
pub mod evaluation;
pub mod experiment;

pub use checkpoint::Checkpoint;
pub use data::{NormStats, SplitSpec, SyntheticSpec, TimeSeriesDataset};
pub use evaluation::{MetricRow, MetricsReport};
pub use experiment::{DataConfig, Prepared, RunResult};
pub use metrics::Metric;
pub use model::{AblationVariant, DataShape, ForecastModel, ModelConfig, ModelKind};
pub use training::{CurriculumSchedule, TrainConfig};

#[cfg(test)]
mod testutil;
