//! Graph forecaster with a learned sparse adjacency, mix-hop propagation and
//! gated dilated inception, optionally fused with neural-field features.
//!
//! Per spatio-temporal module: temporal conv → fusion → graph conv (both
//! edge directions, summed) → BatchNorm → residual. Skip convolutions
//! collapse each module's time axis and accumulate into the output head.
//! Histories shorter than the receptive field are left-padded with zeros; the
//! field features are padded the same way so they stay time-aligned.

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::conv::{check_history, OutputModule};
use crate::error::{Error, Result};
use crate::fusion::{GlobalBranch, GlobalConfig};
use crate::nn::{receptive_field, BatchNorm, Conv, Inception, Linear, Mode, DEFAULT_KERNELS};
use ndarray::{Array2, ArrayD, ArrayView3, IxDyn};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Learned,
    /// A fixed adjacency, e.g. the dataset's sensor graph.
    Fixed(Array2<f64>),
    /// No edges: propagation only sees self-loops.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphConfig {
    pub residual_channels: usize,
    pub conv_channels: usize,
    pub skip_channels: usize,
    pub end_channels: usize,
    pub modules: usize,
    pub kernels: Vec<usize>,
    /// One per module; empty means all ones.
    pub dilations: Vec<usize>,
    pub embed_dim: usize,
    pub alpha: f64,
    /// Neighbours kept per row; `None` means `min(20, N)`.
    pub top_k: Option<usize>,
    pub depth: usize,
    pub beta: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            residual_channels: 32,
            conv_channels: 32,
            skip_channels: 64,
            end_channels: 128,
            modules: 3,
            kernels: DEFAULT_KERNELS.to_vec(),
            dilations: Vec::new(),
            embed_dim: 40,
            alpha: 3.0,
            top_k: None,
            depth: 2,
            beta: 0.05,
        }
    }
}

impl GraphConfig {
    pub fn dilation_schedule(&self) -> Vec<usize> {
        if self.dilations.is_empty() { vec![1; self.modules] } else { self.dilations.clone() }
    }

    pub fn receptive_field(&self) -> usize {
        let kmax = self.kernels.iter().copied().max().unwrap_or(1);
        receptive_field(kmax, &self.dilation_schedule())
    }
}

/// `A = ReLU(tanh(α(M1·M2ᵀ − M2·M1ᵀ)))`, then the `k` largest entries of
/// every row are kept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphLearner {
    pub m1: ParamId,
    pub m2: ParamId,
    pub alpha: f64,
    pub k: usize,
}

/// Indicator of the `k` largest entries per row; ties go to the lower index.
pub fn top_k_mask(a: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut mask = Array2::zeros(a.raw_dim());
    for (i, row) in a.rows().into_iter().enumerate() {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
        for &j in order.iter().take(k) {
            mask[[i, j]] = 1.0;
        }
    }
    mask
}

impl GraphLearner {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        nodes: usize,
        embed_dim: usize,
        alpha: f64,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k > nodes {
            return Err(Error::SparsityTooLarge { k, n: nodes });
        }
        let std = (embed_dim as f64).powf(-0.25);
        let m1 = store.normal("graph.m1", &[nodes, embed_dim], std, rng);
        let m2 = store.normal("graph.m2", &[nodes, embed_dim], std, rng);
        Ok(GraphLearner { m1, m2, alpha, k })
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore) -> Var {
        let m1 = graph.param(store, self.m1);
        let m2 = graph.param(store, self.m2);
        let m2t = graph.transpose(m2);
        let m1t = graph.transpose(m1);
        let a = graph.matmul(m1, m2t);
        let b = graph.matmul(m2, m1t);
        let d = graph.sub(a, b);
        let d = graph.affine(d, self.alpha, 0.0);
        let d = graph.tanh(d);
        let dense = graph.relu(d);
        let values = graph.value(dense).clone().into_dimensionality().unwrap();
        let mask = top_k_mask(&values, self.k);
        graph.mul_const(dense, mask.into_dyn())
    }

    pub fn adjacency(&self, store: &ParamStore) -> Array2<f64> {
        let mut g = Graph::new();
        let a = self.forward(&mut g, store);
        g.value(a).clone().into_dimensionality().unwrap()
    }
}

pub fn learn_graph(learner: &GraphLearner, store: &ParamStore) -> Array2<f64> {
    learner.adjacency(store)
}

/// `H⁰ = H`, `Hᵏ = βH + (1 − β)ÃHᵏ⁻¹`, output `[H⁰ ‖ … ‖ Hᴷ]W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixHop {
    pub select: Linear,
    pub depth: usize,
    pub beta: f64,
}

impl MixHop {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        beta: f64,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        MixHop { select: Linear::new(store, &format!("{name}.select"), (depth + 1) * cin, cout, rng), depth, beta }
    }

    /// `adj_norm` must already be row-normalized with self-loops.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, h: Var, adj_norm: Var) -> Var {
        let mut states = vec![h];
        let mut cur = h;
        let kept = graph.affine(h, self.beta, 0.0);
        for _ in 0..self.depth {
            let mixed = graph.node_mix(adj_norm, cur);
            let moved = graph.affine(mixed, 1.0 - self.beta, 0.0);
            cur = graph.add(kept, moved);
            states.push(cur);
        }
        let all = if states.len() == 1 { h } else { graph.concat(&states, 3) };
        self.select.forward(graph, store, all)
    }
}

pub fn mixhop_forward(layer: &MixHop, graph: &mut Graph, store: &ParamStore, h: Var, adj_norm: Var) -> Var {
    layer.forward(graph, store, h, adj_norm)
}

/// `tanh(filter(x)) ⊙ σ(gate(x))`, both inceptions at the same dilation.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedInception {
    pub filter: Inception,
    pub gate: Inception,
}

impl DilatedInception {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kernels: &[usize],
        cin: usize,
        cout: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        DilatedInception {
            filter: Inception::new(store, &format!("{name}.filter"), kernels, cin, cout, dilation, rng),
            gate: Inception::new(store, &format!("{name}.gate"), kernels, cin, cout, dilation, rng),
        }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let len = graph.shape(x)[2];
        if self.filter.out_len(len).is_none() {
            return Err(Error::WindowTooShort { needed: self.filter.shrink() + 1, available: len });
        }
        // one shared im2col for both inceptions, split along channels after
        let out_len = len - self.filter.shrink();
        let mut branches = self.filter.branch_vars(graph, store);
        branches.extend(self.gate.branch_vars(graph, store));
        let both = graph.multi_conv(x, &branches, self.filter.dilation, out_len);
        let cout = graph.shape(both)[3] / 2;
        let f = graph.slice(both, 3, 0, cout);
        let f = graph.tanh(f);
        let g = graph.slice(both, 3, cout, cout);
        let g = graph.sigmoid(g);
        Ok(graph.mul(f, g))
    }
}

pub fn dilated_inception_forward(
    layer: &DilatedInception,
    graph: &mut Graph,
    store: &ParamStore,
    x: Var,
) -> Result<Var> {
    layer.forward(graph, store, x)
}

#[derive(Clone, Debug)]
pub struct SpatioTemporalModule {
    pub temporal: DilatedInception,
    pub skip: Conv,
    pub forward_hop: MixHop,
    pub backward_hop: MixHop,
    pub norm: BatchNorm,
    /// Time length this module produces.
    pub out_len: usize,
}

/// The graph baseline (`global = None`) or its field-fused variant.
#[derive(Clone, Debug)]
pub struct GraphForecaster {
    pub config: GraphConfig,
    pub input_channels: usize,
    pub history: usize,
    pub horizon: usize,
    pub nodes: usize,
    /// History length after front padding.
    pub padded_len: usize,
    pub start: Linear,
    pub skip_start: Conv,
    pub learner: Option<GraphLearner>,
    pub fixed_adjacency: Option<Array2<f64>>,
    pub modules: Vec<SpatioTemporalModule>,
    pub skip_end: Conv,
    pub global: Option<GlobalBranch>,
    pub output: OutputModule,
}

impl GraphForecaster {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        config: GraphConfig,
        source: GraphSource,
        global: Option<&GlobalConfig>,
        nodes: usize,
        input_channels: usize,
        history: usize,
        horizon: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let dilations = config.dilation_schedule();
        if dilations.len() != config.modules {
            return Err(Error::Config(format!(
                "{} dilations for {} modules",
                dilations.len(),
                config.modules
            )));
        }
        if config.kernels.is_empty() || config.kernels.contains(&0) || dilations.contains(&0) {
            return Err(Error::Config("kernels and dilations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.beta) {
            return Err(Error::Config(format!("retain ratio {} outside [0, 1]", config.beta)));
        }
        if history == 0 {
            return Err(Error::Config("history length must be positive".into()));
        }
        let (rc, cc, sc) = (config.residual_channels, config.conv_channels, config.skip_channels);
        let rf = config.receptive_field();
        let padded_len = history.max(rf);

        let start = Linear::new(store, "start", input_channels, rc, rng);
        let skip_start = Conv::new(store, "skip_start", padded_len, input_channels, sc, rng);
        let (learner, fixed_adjacency) = match source {
            GraphSource::Learned => {
                let k = config.top_k.unwrap_or(20.min(nodes));
                (Some(GraphLearner::new(store, nodes, config.embed_dim, config.alpha, k, rng)?), None)
            }
            GraphSource::Fixed(a) => {
                if a.dim() != (nodes, nodes) {
                    return Err(Error::Shape(format!("adjacency {:?} for {nodes} nodes", a.dim())));
                }
                (None, Some(a))
            }
            GraphSource::Identity => (None, Some(Array2::zeros((nodes, nodes)))),
        };

        let mut len = padded_len;
        let mut modules = Vec::with_capacity(config.modules);
        for (i, &d) in dilations.iter().enumerate() {
            let name = format!("module{i}");
            let temporal = DilatedInception::new(store, &format!("{name}.temporal"), &config.kernels, rc, cc, d, rng);
            len = temporal.filter.out_len(len).ok_or(Error::WindowTooShort { needed: rf, available: padded_len })?;
            let skip = Conv::new(store, &format!("{name}.skip"), len, cc, sc, rng);
            let forward_hop = MixHop::new(store, &format!("{name}.gc_fwd"), config.depth, config.beta, cc, rc, rng);
            let backward_hop = MixHop::new(store, &format!("{name}.gc_bwd"), config.depth, config.beta, cc, rc, rng);
            let norm = BatchNorm::new(store, &format!("{name}.bn"), rc);
            modules.push(SpatioTemporalModule { temporal, skip, forward_hop, backward_hop, norm, out_len: len });
        }
        let skip_end = Conv::new(store, "skip_end", len, rc, sc, rng);
        let output = OutputModule::new(store, "output", sc, config.end_channels, horizon, rng);
        let global = match global {
            Some(g) => Some(GlobalBranch::new(g, nodes, &vec![cc; config.modules], rc, store, rng)?),
            None => None,
        };
        Ok(GraphForecaster {
            config,
            input_channels,
            history,
            horizon,
            nodes,
            padded_len,
            start,
            skip_start,
            learner,
            fixed_adjacency,
            modules,
            skip_end,
            global,
            output,
        })
    }

    /// The adjacency before normalization.
    pub fn adjacency(&self, store: &ParamStore) -> Array2<f64> {
        match (&self.learner, &self.fixed_adjacency) {
            (Some(l), _) => l.adjacency(store),
            (None, Some(a)) => a.clone(),
            (None, None) => unreachable!("graph forecaster without a graph"),
        }
    }

    fn adjacency_var(&self, graph: &mut Graph, store: &ParamStore) -> Var {
        match (&self.learner, &self.fixed_adjacency) {
            (Some(l), _) => l.forward(graph, store),
            (None, Some(a)) => graph.input(a.clone().into_dyn()),
            (None, None) => unreachable!("graph forecaster without a graph"),
        }
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
        if sh[2] != self.history {
            return Err(Error::Shape(format!("history length {} but model built for {}", sh[2], self.history)));
        }
        let pad = self.padded_len - self.history;
        let x = graph.pad_front(history, 2, pad);
        let all_nodes: Vec<usize> = (0..self.nodes).collect();
        let field = match &self.global {
            Some(g) => {
                let f = g.features(graph, store, coords, &all_nodes)?;
                Some(graph.pad_front(f, 2, pad))
            }
            None => None,
        };

        let mut skip = self.skip_start.forward(graph, store, x, 0, 1, 1);
        let mut h = self.start.forward(graph, store, x);
        if let (Some(g), Some(f)) = (&self.global, field) {
            if let Some(site) = g.input_site() {
                h = site.forward(graph, store, h, f)?;
            }
        }

        let adj = self.adjacency_var(graph, store);
        let adj_fwd = graph.row_normalize_self_loop(adj);
        let adj_t = graph.transpose(adj);
        let adj_bwd = graph.row_normalize_self_loop(adj_t);

        for (i, m) in self.modules.iter().enumerate() {
            let residual = h;
            let mut t = m.temporal.forward(graph, store, h)?;
            if let (Some(g), Some(f)) = (&self.global, field) {
                if let Some(site) = g.layer_site(i) {
                    t = site.forward(graph, store, t, f)?;
                }
            }
            let s = m.skip.forward(graph, store, t, 0, 1, 1);
            skip = graph.add(skip, s);
            let a = m.forward_hop.forward(graph, store, t, adj_fwd);
            let b = m.backward_hop.forward(graph, store, t, adj_bwd);
            let gc = graph.add(a, b);
            let gc = m.norm.forward(graph, store, gc, mode);
            let len = graph.shape(residual)[2];
            let cropped = graph.slice(residual, 2, len - m.out_len, m.out_len);
            h = graph.add(gc, cropped);
        }
        let s = self.skip_end.forward(graph, store, h, 0, 1, 1);
        skip = graph.add(skip, s);
        let skip = graph.relu(skip);
        Ok(self.output.forward(graph, store, skip))
    }
}

/// Row-normalized `A + I` as a plain matrix.
pub fn normalized_with_self_loops(a: &Array2<f64>) -> Array2<f64> {
    let mut g = Graph::new();
    let v = g.input(ArrayD::from_shape_vec(IxDyn(&[a.nrows(), a.ncols()]), a.iter().copied().collect()).unwrap());
    let n = g.row_normalize_self_loop(v);
    g.value(n).clone().into_dimensionality().unwrap()
}
