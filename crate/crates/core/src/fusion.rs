//! Blending of global (neural field) and local (history) features.
//!
//! Tensors follow the `[batch, node, time, channel]` layout. A [`FusionSite`]
//! is one layer's worth of fusion: it crops the shared field output to the
//! host layer's time length, adapts its width to the host channels and merges
//! it with the local features.

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::field::{ConditionalNeuralField, FieldConfig};
use ndarray::{s, Array3, ArrayView3};
use rand::Rng;

/// `z = σ([local ‖ global]W + b)`, `H = (1 − z)⊙local + z⊙global`.
///
/// `W` is `2c × c` and shared by every node and timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GatedFusionLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub channels: usize,
}

impl GatedFusionLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        let fan_in = 2 * channels;
        let w = store.fan_in_uniform(format!("{prefix}.gate.w"), &[fan_in, channels], fan_in, rng);
        let b = store.fan_in_uniform(format!("{prefix}.gate.b"), &[channels], fan_in, rng);
        GatedFusionLayer { w, b, channels }
    }

    pub fn gate(&self, graph: &mut Graph, store: &ParamStore, local: Var, global: Var) -> Result<Var> {
        check_same_shape(graph, local, global)?;
        let c = *graph.shape(local).last().unwrap_or(&0);
        if c != self.channels {
            return Err(Error::Shape(format!("gate expects {} channels, got {c}", self.channels)));
        }
        let axis = graph.shape(local).len() - 1;
        let both = graph.concat(&[local, global], axis);
        let (w, b) = (graph.param(store, self.w), graph.param(store, self.b));
        let pre = graph.linear(both, w, Some(b));
        Ok(graph.sigmoid(pre))
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, local: Var, global: Var) -> Result<Var> {
        let z = self.gate(graph, store, local, global)?;
        let diff = graph.sub(global, local);
        let moved = graph.mul(z, diff);
        Ok(graph.add(local, moved))
    }
}

pub fn gated_fuse(
    layer: &GatedFusionLayer,
    graph: &mut Graph,
    store: &ParamStore,
    local: Var,
    global: Var,
) -> Result<Var> {
    layer.forward(graph, store, local, global)
}

fn check_same_shape(graph: &Graph, a: Var, b: Var) -> Result<()> {
    if graph.shape(a) != graph.shape(b) {
        return Err(Error::Shape(format!(
            "local features {:?} and global features {:?} differ",
            graph.shape(a),
            graph.shape(b)
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AggregateMode {
    #[default]
    Gated,
    Addition,
    Multiplication,
    Concatenation,
}

impl AggregateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(AggregateMode::Gated),
            "addition" => Ok(AggregateMode::Addition),
            "multiplication" => Ok(AggregateMode::Multiplication),
            "concatenation" => Ok(AggregateMode::Concatenation),
            other => Err(Error::Unknown { what: "aggregation mode", name: other.into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggregateMode::Gated => "gated",
            AggregateMode::Addition => "addition",
            AggregateMode::Multiplication => "multiplication",
            AggregateMode::Concatenation => "concatenation",
        }
    }
}

/// A merge rule with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Gated(GatedFusionLayer),
    Addition,
    Multiplication,
    /// `[local ‖ global]W + b` with `W: 2c × c`.
    Concatenation { w: ParamId, b: ParamId },
}

impl Aggregator {
    pub fn new<R: Rng>(mode: AggregateMode, store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        match mode {
            AggregateMode::Gated => Aggregator::Gated(GatedFusionLayer::new(store, prefix, channels, rng)),
            AggregateMode::Addition => Aggregator::Addition,
            AggregateMode::Multiplication => Aggregator::Multiplication,
            AggregateMode::Concatenation => {
                let fan_in = 2 * channels;
                let w = store.fan_in_uniform(format!("{prefix}.concat.w"), &[fan_in, channels], fan_in, rng);
                let b = store.fan_in_uniform(format!("{prefix}.concat.b"), &[channels], fan_in, rng);
                Aggregator::Concatenation { w, b }
            }
        }
    }

    pub fn mode(&self) -> AggregateMode {
        match self {
            Aggregator::Gated(_) => AggregateMode::Gated,
            Aggregator::Addition => AggregateMode::Addition,
            Aggregator::Multiplication => AggregateMode::Multiplication,
            Aggregator::Concatenation { .. } => AggregateMode::Concatenation,
        }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, local: Var, global: Var) -> Result<Var> {
        match self {
            Aggregator::Gated(layer) => layer.forward(graph, store, local, global),
            Aggregator::Addition => {
                check_same_shape(graph, local, global)?;
                Ok(graph.add(local, global))
            }
            Aggregator::Multiplication => {
                check_same_shape(graph, local, global)?;
                Ok(graph.mul(local, global))
            }
            Aggregator::Concatenation { w, b } => {
                check_same_shape(graph, local, global)?;
                let axis = graph.shape(local).len() - 1;
                let both = graph.concat(&[local, global], axis);
                let (w, b) = (graph.param(store, *w), graph.param(store, *b));
                Ok(graph.linear(both, w, Some(b)))
            }
        }
    }
}

pub fn aggregate(
    aggregator: &Aggregator,
    graph: &mut Graph,
    store: &ParamStore,
    local: Var,
    global: Var,
) -> Result<Var> {
    aggregator.forward(graph, store, local, global)
}

/// Keeps the last `len` timestamps of `[time, node, d]` features.
pub fn align_global(global: &Array3<f64>, len: usize) -> Result<Array3<f64>> {
    let t = global.dim().0;
    if len > t {
        return Err(Error::WindowTooShort { needed: len, available: t });
    }
    Ok(global.slice(s![t - len.., .., ..]).to_owned())
}

/// [`align_global`] on the tape, for `[batch, node, time, d]`.
pub fn align_global_var(graph: &mut Graph, global: Var, len: usize) -> Result<Var> {
    let t = graph.shape(global)[2];
    if len > t {
        return Err(Error::WindowTooShort { needed: len, available: t });
    }
    if len == t {
        return Ok(global);
    }
    Ok(graph.slice(global, 2, t - len, len))
}

/// One layer's fusion: crop, adapt the field width to the host width, merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionSite {
    pub adapter_w: ParamId,
    pub adapter_b: ParamId,
    pub aggregator: Aggregator,
}

impl FusionSite {
    pub fn new<R: Rng>(
        mode: AggregateMode,
        field_dim: usize,
        channels: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Self {
        let adapter_w = store.fan_in_uniform(format!("{prefix}.adapter.w"), &[field_dim, channels], field_dim, rng);
        let adapter_b = store.fan_in_uniform(format!("{prefix}.adapter.b"), &[channels], field_dim, rng);
        let aggregator = Aggregator::new(mode, store, prefix, channels, rng);
        FusionSite { adapter_w, adapter_b, aggregator }
    }

    /// Adapted field features cropped to the time length of `local`.
    pub fn global(&self, graph: &mut Graph, store: &ParamStore, local: Var, field: Var) -> Result<Var> {
        let len = graph.shape(local)[2];
        let cropped = align_global_var(graph, field, len)?;
        let (w, b) = (graph.param(store, self.adapter_w), graph.param(store, self.adapter_b));
        Ok(graph.linear(cropped, w, Some(b)))
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, local: Var, field: Var) -> Result<Var> {
        let global = self.global(graph, store, local, field)?;
        self.aggregator.forward(graph, store, local, global)
    }
}

/// Where field features enter the host network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Placement {
    /// One fusion site per host layer.
    #[default]
    LayerWise,
    /// A single site in front of the first layer.
    InputOnce,
}

impl Placement {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "layerwise" => Ok(Placement::LayerWise),
            "input" => Ok(Placement::InputOnce),
            other => Err(Error::Unknown { what: "fusion placement", name: other.into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::LayerWise => "layerwise",
            Placement::InputOnce => "input",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalConfig {
    pub field: FieldConfig,
    pub mode: AggregateMode,
    pub placement: Placement,
}

/// The neural field together with the fusion sites of its host network.
#[derive(Clone, Debug)]
pub struct GlobalBranch {
    pub field: ConditionalNeuralField,
    pub placement: Placement,
    pub sites: Vec<FusionSite>,
}

impl GlobalBranch {
    /// `layer_channels` lists the host width at every layer-wise site;
    /// `input_channels` is the width in front of the first layer.
    pub fn new<R: Rng>(
        config: &GlobalConfig,
        node_count: usize,
        layer_channels: &[usize],
        input_channels: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let field = ConditionalNeuralField::new(config.field, node_count, store, "global.field", rng)?;
        let d = field.out_dim();
        let sites = match config.placement {
            Placement::LayerWise => layer_channels
                .iter()
                .enumerate()
                .map(|(i, &c)| FusionSite::new(config.mode, d, c, store, &format!("global.site{i}"), rng))
                .collect(),
            Placement::InputOnce => {
                vec![FusionSite::new(config.mode, d, input_channels, store, "global.site_input", rng)]
            }
        };
        Ok(GlobalBranch { field, placement: config.placement, sites })
    }

    /// Field features `[batch, node, time, d]` for `[batch, time, k]` coordinates.
    pub fn features(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        coords: ArrayView3<f64>,
        nodes: &[usize],
    ) -> Result<Var> {
        self.field.forward_batch(graph, store, coords, nodes)
    }

    pub fn input_site(&self) -> Option<&FusionSite> {
        match self.placement {
            Placement::InputOnce => self.sites.first(),
            Placement::LayerWise => None,
        }
    }

    pub fn layer_site(&self, layer: usize) -> Option<&FusionSite> {
        match self.placement {
            Placement::LayerWise => self.sites.get(layer),
            Placement::InputOnce => None,
        }
    }
}
