//! Inception forecaster and its field-fused variant.
//!
//! `input 1×1 → K × (pad, inception, ReLU, BatchNorm, +residual [, fuse]) →
//! last step → 1×1 → ReLU → 1×1`. Every module is left-padded by its span, so
//! the time axis keeps the history length throughout the stack.

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::fusion::{GlobalBranch, GlobalConfig};
use crate::nn::{BatchNorm, Inception, Linear, Mode, DEFAULT_KERNELS};
use ndarray::ArrayView3;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvConfig {
    pub channels: usize,
    pub modules: usize,
    pub kernels: Vec<usize>,
    pub out_hidden: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig { channels: 32, modules: 3, kernels: DEFAULT_KERNELS.to_vec(), out_hidden: 64 }
    }
}

/// Inception block with ReLU, batch norm and a residual connection.
#[derive(Clone, Debug)]
pub struct InceptionModule {
    pub inception: Inception,
    pub norm: BatchNorm,
}

impl InceptionModule {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, kernels: &[usize], channels: usize, rng: &mut R) -> Self {
        InceptionModule {
            inception: Inception::new(store, &format!("{name}.inception"), kernels, channels, channels, 1, rng),
            norm: BatchNorm::new(store, &format!("{name}.bn"), channels),
        }
    }

    /// Unpadded forward: the output is shorter than `x` by the widest span
    /// and the residual is the matching suffix of `x`.
    pub fn forward_valid(&self, graph: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let len = graph.shape(x)[2];
        let out_len = self.inception.out_len(len).ok_or(Error::WindowTooShort {
            needed: self.inception.shrink() + 1,
            available: len,
        })?;
        let y = self.inception.forward(graph, store, x);
        let y = graph.relu(y);
        let y = self.norm.forward(graph, store, y, mode);
        let residual = graph.slice(x, 2, len - out_len, out_len);
        Ok(graph.add(y, residual))
    }

    /// Length-preserving forward used inside the stack.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let padded = graph.pad_front(x, 2, self.inception.shrink());
        self.forward_valid(graph, store, padded, mode)
    }
}

pub fn inception_forward(
    module: &InceptionModule,
    graph: &mut Graph,
    store: &ParamStore,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    module.forward_valid(graph, store, x, mode)
}

/// Two 1×1 maps with a ReLU in between, from hidden channels to horizons.
#[derive(Clone, Copy, Debug)]
pub struct OutputModule {
    pub first: Linear,
    pub second: Linear,
}

impl OutputModule {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, hidden: usize, horizon: usize, rng: &mut R) -> Self {
        OutputModule {
            first: Linear::new(store, &format!("{name}.first"), cin, hidden, rng),
            second: Linear::new(store, &format!("{name}.second"), hidden, horizon, rng),
        }
    }

    /// `[B, N, 1, c] → [B, N, horizon]`.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.first.forward(graph, store, x);
        let h = graph.relu(h);
        let y = self.second.forward(graph, store, h);
        let sh = graph.shape(y).to_vec();
        graph.reshape(y, &[sh[0], sh[1], sh[3]])
    }
}

/// The inception baseline (`global = None`) or its field-fused variant.
#[derive(Clone, Debug)]
pub struct ConvForecaster {
    pub config: ConvConfig,
    pub input_channels: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub start: Linear,
    pub modules: Vec<InceptionModule>,
    pub global: Option<GlobalBranch>,
    pub output: OutputModule,
}

impl ConvForecaster {
    pub fn new<R: Rng>(
        config: ConvConfig,
        global: Option<&GlobalConfig>,
        nodes: usize,
        input_channels: usize,
        horizon: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if config.kernels.is_empty() || config.kernels.contains(&0) {
            return Err(Error::Config("inception kernels must be positive".into()));
        }
        if config.channels < config.kernels.len() {
            return Err(Error::Config(format!(
                "{} channels cannot feed {} branches",
                config.channels,
                config.kernels.len()
            )));
        }
        let c = config.channels;
        let start = Linear::new(store, "start", input_channels, c, rng);
        let modules = (0..config.modules)
            .map(|i| InceptionModule::new(store, &format!("module{i}"), &config.kernels, c, rng))
            .collect();
        let output = OutputModule::new(store, "output", c, config.out_hidden, horizon, rng);
        let global = match global {
            Some(g) => Some(GlobalBranch::new(g, nodes, &vec![c; config.modules], c, store, rng)?),
            None => None,
        };
        Ok(ConvForecaster { config, input_channels, horizon, nodes, start, modules, global, output })
    }

    /// `history` is `[B, N, T, C]`, `coords` `[B, T, k]`; returns `[B, N, horizon]`.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        history: Var,
        coords: ArrayView3<f64>,
        mode: Mode,
    ) -> Result<Var> {
        let sh = graph.shape(history).to_vec();
        check_history(&sh, self.nodes, self.input_channels, 1)?;
        let all_nodes: Vec<usize> = (0..self.nodes).collect();
        let field = match &self.global {
            Some(g) => Some(g.features(graph, store, coords, &all_nodes)?),
            None => None,
        };
        let mut h = self.start.forward(graph, store, history);
        if let (Some(g), Some(f)) = (&self.global, field) {
            if let Some(site) = g.input_site() {
                h = site.forward(graph, store, h, f)?;
            }
        }
        for (i, m) in self.modules.iter().enumerate() {
            h = m.forward(graph, store, h, mode)?;
            if let (Some(g), Some(f)) = (&self.global, field) {
                if let Some(site) = g.layer_site(i) {
                    h = site.forward(graph, store, h, f)?;
                }
            }
        }
        let last = graph.slice(h, 2, sh[2] - 1, 1);
        Ok(self.output.forward(graph, store, last))
    }
}

pub(crate) fn check_history(shape: &[usize], nodes: usize, channels: usize, min_len: usize) -> Result<()> {
    if shape.len() != 4 || shape[1] != nodes || shape[3] != channels {
        return Err(Error::Shape(format!(
            "history must be [batch, {nodes}, time, {channels}], got {shape:?}"
        )));
    }
    if shape[2] < min_len {
        return Err(Error::WindowTooShort { needed: min_len, available: shape[2] });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
