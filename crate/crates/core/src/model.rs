//! The four forecaster kinds behind one interface.

use crate::autograd::{Graph, ParamStore, Var};
use crate::conv::{ConvConfig, ConvForecaster};
use crate::error::{Error, Result};
use crate::field::{EncoderKind, FieldConfig};
use crate::fusion::{AggregateMode, GlobalConfig, Placement};
use crate::graph::{GraphConfig, GraphForecaster, GraphSource};
use crate::nn::Mode;
use ndarray::{Array2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Inception,
    Seacnn,
    Mtgnn,
    Seagnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Inception, ModelKind::Seacnn, ModelKind::Mtgnn, ModelKind::Seagnn];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inception" => Ok(ModelKind::Inception),
            "seacnn" => Ok(ModelKind::Seacnn),
            "mtgnn" => Ok(ModelKind::Mtgnn),
            "seagnn" => Ok(ModelKind::Seagnn),
            other => Err(Error::Unknown { what: "model kind", name: other.into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Inception => "inception",
            ModelKind::Seacnn => "seacnn",
            ModelKind::Mtgnn => "mtgnn",
            ModelKind::Seagnn => "seagnn",
        }
    }

    pub fn uses_field(self) -> bool {
        matches!(self, ModelKind::Seacnn | ModelKind::Seagnn)
    }

    pub fn is_graph(self) -> bool {
        matches!(self, ModelKind::Mtgnn | ModelKind::Seagnn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GraphSourceKind {
    #[default]
    Learned,
    /// The dataset's adjacency matrix.
    Prior,
    Identity,
}

impl GraphSourceKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(GraphSourceKind::Learned),
            "prior" => Ok(GraphSourceKind::Prior),
            "identity" => Ok(GraphSourceKind::Identity),
            other => Err(Error::Unknown { what: "graph source", name: other.into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GraphSourceKind::Learned => "learned",
            GraphSourceKind::Prior => "prior",
            GraphSourceKind::Identity => "identity",
        }
    }
}

/// Ablations of the fused graph forecaster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Full,
    NoRff,
    NoLgf,
    AggAddition,
    AggMultiplication,
    AggConcatenation,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::NoRff,
        AblationVariant::NoLgf,
        AblationVariant::AggAddition,
        AblationVariant::AggMultiplication,
        AblationVariant::AggConcatenation,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Unknown { what: "ablation variant", name: s.into() })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoRff => "no_rff",
            AblationVariant::NoLgf => "no_lgf",
            AblationVariant::AggAddition => "agg_addition",
            AblationVariant::AggMultiplication => "agg_multiplication",
            AblationVariant::AggConcatenation => "agg_concatenation",
        }
    }

    /// `config` with this variant's change applied.
    pub fn apply(self, config: &ModelConfig) -> ModelConfig {
        let mut c = config.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoRff => c.field.encoder = EncoderKind::Linear,
            AblationVariant::NoLgf => {
                c.fusion_mode = AggregateMode::Addition;
                c.placement = Placement::InputOnce;
            }
            AblationVariant::AggAddition => c.fusion_mode = AggregateMode::Addition,
            AblationVariant::AggMultiplication => c.fusion_mode = AggregateMode::Multiplication,
            AblationVariant::AggConcatenation => c.fusion_mode = AggregateMode::Concatenation,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub conv: ConvConfig,
    pub graph: GraphConfig,
    pub graph_source: GraphSourceKind,
    pub field: FieldConfig,
    pub fusion_mode: AggregateMode,
    pub placement: Placement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Seagnn,
            conv: ConvConfig::default(),
            graph: GraphConfig::default(),
            graph_source: GraphSourceKind::Learned,
            field: FieldConfig::default(),
            fusion_mode: AggregateMode::Gated,
            placement: Placement::LayerWise,
        }
    }
}

impl ModelConfig {
    fn global(&self) -> GlobalConfig {
        GlobalConfig { field: self.field, mode: self.fusion_mode, placement: self.placement }
    }
}

/// Sizes fixed by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataShape {
    pub nodes: usize,
    pub input_channels: usize,
    pub history: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug)]
pub enum ForecastModel {
    Conv(ConvForecaster),
    Graph(GraphForecaster),
}

impl ForecastModel {
    /// Builds a model and its freshly initialized parameters from `seed`.
    pub fn build(
        config: &ModelConfig,
        shape: DataShape,
        adjacency: Option<&Array2<f64>>,
        seed: u64,
    ) -> Result<(ForecastModel, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let global = config.kind.uses_field().then(|| config.global());
        let model = if config.kind.is_graph() {
            let source = match config.graph_source {
                GraphSourceKind::Learned => GraphSource::Learned,
                GraphSourceKind::Identity => GraphSource::Identity,
                GraphSourceKind::Prior => GraphSource::Fixed(
                    adjacency
                        .ok_or_else(|| Error::Config("graph.source=prior needs a dataset adjacency".into()))?
                        .clone(),
                ),
            };
            ForecastModel::Graph(GraphForecaster::new(
                config.graph.clone(),
                source,
                global.as_ref(),
                shape.nodes,
                shape.input_channels,
                shape.history,
                shape.horizon,
                &mut store,
                &mut rng,
            )?)
        } else {
            ForecastModel::Conv(ConvForecaster::new(
                config.conv.clone(),
                global.as_ref(),
                shape.nodes,
                shape.input_channels,
                shape.horizon,
                &mut store,
                &mut rng,
            )?)
        };
        Ok((model, store))
    }

    /// Normalized predictions `[B, N, horizon]`.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        history: Var,
        coords: ArrayView3<f64>,
        mode: Mode,
    ) -> Result<Var> {
        match self {
            ForecastModel::Conv(m) => m.forward(graph, store, history, coords, mode),
            ForecastModel::Graph(m) => m.forward(graph, store, history, coords, mode),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ForecastModel::Conv(m) => m.horizon,
            ForecastModel::Graph(m) => m.horizon,
        }
    }

    pub fn global(&self) -> Option<&crate::fusion::GlobalBranch> {
        match self {
            ForecastModel::Conv(m) => m.global.as_ref(),
            ForecastModel::Graph(m) => m.global.as_ref(),
        }
    }

    /// Number of places where field features are merged in.
    pub fn fusion_sites(&self) -> usize {
        self.global().map_or(0, |g| g.sites.len())
    }
}
