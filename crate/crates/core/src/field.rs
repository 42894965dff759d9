//! Coordinate-based networks over calendar coordinates.
//!
//! [`ConditionalNeuralField`] maps a `(time coordinate, node)` pair to a
//! feature vector: the time coordinate goes through an input encoding
//! (random Fourier features by default), the node index through a fixed
//! Fourier code, and the concatenation through a ReLU MLP. One field serves
//! every node.

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

/// Fixed Gaussian Fourier feature map `x ↦ [cos(2πBx), sin(2πBx)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffEncoder {
    /// `m × d_in`, drawn once and never trained.
    pub frequencies: Array2<f64>,
    pub sigma: f64,
}

impl RffEncoder {
    pub fn sample<R: Rng>(m: usize, d_in: usize, sigma: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sigma).expect("sigma must be finite and nonnegative");
        let frequencies = Array2::from_shape_simple_fn((m, d_in), || normal.sample(rng));
        RffEncoder { frequencies, sigma }
    }

    pub fn from_seed(m: usize, d_in: usize, sigma: f64, seed: u64) -> Self {
        Self::sample(m, d_in, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_frequencies(frequencies: Array2<f64>) -> Self {
        RffEncoder { frequencies, sigma: f64::NAN }
    }

    pub fn frequency_count(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.frequency_count()
    }

    /// Cosines first, then sines.
    pub fn encode(&self, x: &[f64]) -> Array1<f64> {
        assert_eq!(x.len(), self.input_dim(), "rff input width");
        let m = self.frequency_count();
        let proj = self.frequencies.dot(&ndarray::aview1(x));
        let mut out = Array1::zeros(2 * m);
        for (i, p) in proj.iter().enumerate() {
            let (s, c) = (TAU * p).sin_cos();
            out[i] = c;
            out[m + i] = s;
        }
        out
    }

    /// Row-wise [`encode`](Self::encode).
    pub fn encode_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let m = self.frequency_count();
        let proj = x.dot(&self.frequencies.t());
        let mut out = Array2::zeros((x.nrows(), 2 * m));
        for (r, row) in proj.rows().into_iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                let (s, c) = (TAU * p).sin_cos();
                out[[r, i]] = c;
                out[[r, m + i]] = s;
            }
        }
        out
    }
}

/// Deterministic per-node latent codes: the Fourier code of `i / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddingTable {
    encoder: RffEncoder,
    table: Array2<f64>,
}

impl NodeEmbeddingTable {
    pub fn new(node_count: usize, encoder: RffEncoder) -> Self {
        assert_eq!(encoder.input_dim(), 1, "node codes take a scalar index");
        let idx = Array2::from_shape_fn((node_count, 1), |(i, _)| i as f64 / node_count as f64);
        let table = encoder.encode_rows(idx.view());
        NodeEmbeddingTable { encoder, table }
    }

    pub fn node_count(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn encoder(&self) -> &RffEncoder {
        &self.encoder
    }

    pub fn embed(&self, i: usize) -> Result<Array1<f64>> {
        if i >= self.node_count() {
            return Err(Error::NodeOutOfRange { index: i, len: self.node_count() });
        }
        Ok(self.table.row(i).to_owned())
    }

    /// Codes of `nodes`, one row each.
    pub fn rows(&self, nodes: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((nodes.len(), self.dim()));
        for (r, &i) in nodes.iter().enumerate() {
            out.row_mut(r).assign(&self.embed(i)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EncoderKind {
    #[default]
    Rff,
    Siren,
    Linear,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rff" => Ok(EncoderKind::Rff),
            "siren" => Ok(EncoderKind::Siren),
            "linear" | "vanilla" => Ok(EncoderKind::Linear),
            other => Err(Error::Unknown { what: "encoder kind", name: other.into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Rff => "rff",
            EncoderKind::Siren => "siren",
            EncoderKind::Linear => "linear",
        }
    }
}

/// First stage of a coordinate network.
#[derive(Clone, Debug, PartialEq)]
pub enum InputEncoder {
    Rff(RffEncoder),
    /// `sin(ω₀·(xW + b))`.
    Siren { w: ParamId, b: ParamId, omega0: f64, out_dim: usize },
    /// Learnable affine map `xW + b`.
    Linear { w: ParamId, b: ParamId, out_dim: usize },
}

/// Hyperparameters for [`make_encoder`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    /// `2m` for Fourier features, the layer width otherwise.
    pub output_dim: usize,
    pub sigma: f64,
    pub omega0: f64,
}

pub fn make_encoder<R: Rng>(
    spec: &EncoderSpec,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut R,
) -> Result<InputEncoder> {
    let (d_in, d_out) = (spec.input_dim, spec.output_dim);
    Ok(match spec.kind {
        EncoderKind::Rff => {
            if d_out % 2 != 0 {
                return Err(Error::Config(format!("Fourier feature width {d_out} must be even")));
            }
            InputEncoder::Rff(RffEncoder::sample(d_out / 2, d_in, spec.sigma, rng))
        }
        EncoderKind::Siren => {
            // First-layer initialization of the sine network: U(-1/d_in, 1/d_in).
            let bound = 1.0 / d_in as f64;
            let w = store.add(
                format!("{prefix}.w"),
                crate::autograd::uniform(&[d_in, d_out], bound, rng),
            );
            let b = store.fan_in_uniform(format!("{prefix}.b"), &[d_out], d_in, rng);
            InputEncoder::Siren { w, b, omega0: spec.omega0, out_dim: d_out }
        }
        EncoderKind::Linear => {
            let w = store.fan_in_uniform(format!("{prefix}.w"), &[d_in, d_out], d_in, rng);
            let b = store.fan_in_uniform(format!("{prefix}.b"), &[d_out], d_in, rng);
            InputEncoder::Linear { w, b, out_dim: d_out }
        }
    })
}

impl InputEncoder {
    pub fn output_dim(&self) -> usize {
        match self {
            InputEncoder::Rff(e) => e.output_dim(),
            InputEncoder::Siren { out_dim, .. } | InputEncoder::Linear { out_dim, .. } => *out_dim,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            InputEncoder::Rff(_) => EncoderKind::Rff,
            InputEncoder::Siren { .. } => EncoderKind::Siren,
            InputEncoder::Linear { .. } => EncoderKind::Linear,
        }
    }

    /// Encodes the rows of `x` (`[rows, d_in]`).
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: ArrayView2<f64>) -> Var {
        match self {
            InputEncoder::Rff(e) => graph.input(e.encode_rows(x).into_dyn()),
            InputEncoder::Siren { w, b, omega0, .. } => {
                let xv = graph.input(x.to_owned().into_dyn());
                let (w, b) = (graph.param(store, *w), graph.param(store, *b));
                let pre = graph.linear(xv, w, Some(b));
                let scaled = graph.affine(pre, *omega0, 0.0);
                graph.sin(scaled)
            }
            InputEncoder::Linear { w, b, .. } => {
                let xv = graph.input(x.to_owned().into_dyn());
                let (w, b) = (graph.param(store, *w), graph.param(store, *b));
                graph.linear(xv, w, Some(b))
            }
        }
    }
}

/// Sizes of a [`ConditionalNeuralField`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    pub encoder: EncoderKind,
    /// Time Fourier frequency count `m` (encoder width `2m`).
    pub time_frequencies: usize,
    pub time_sigma: f64,
    pub node_frequencies: usize,
    pub node_sigma: f64,
    pub hidden: usize,
    /// Number of affine maps; ReLU sits between consecutive ones.
    pub layers: usize,
    pub out_dim: usize,
    /// Appends the weekend flag after the time encoding.
    pub with_weekend: bool,
    pub siren_omega0: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            encoder: EncoderKind::Rff,
            time_frequencies: 64,
            time_sigma: 10.0,
            node_frequencies: 16,
            node_sigma: 1.0,
            hidden: 256,
            layers: 3,
            out_dim: 32,
            with_weekend: false,
            siren_omega0: 30.0,
        }
    }
}

impl FieldConfig {
    pub fn coord_width(&self) -> usize {
        if self.with_weekend { 3 } else { 2 }
    }
}

/// Shared, node-conditioned neural field.
#[derive(Clone, Debug)]
pub struct ConditionalNeuralField {
    pub config: FieldConfig,
    pub time_encoder: InputEncoder,
    pub nodes: NodeEmbeddingTable,
    /// `(weight, bias)` per affine map; the first weight has rows for the
    /// time features followed by rows for the node code.
    pub layers: Vec<(ParamId, ParamId)>,
}

fn check_coords(coords: &[f64]) -> Result<()> {
    for &v in coords {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::CoordinateOutOfDomain { value: v });
        }
    }
    Ok(())
}

impl ConditionalNeuralField {
    pub fn new<R: Rng>(
        config: FieldConfig,
        node_count: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("neural field needs at least one layer".into()));
        }
        let time_encoder = make_encoder(
            &EncoderSpec {
                kind: config.encoder,
                input_dim: 2,
                output_dim: 2 * config.time_frequencies,
                sigma: config.time_sigma,
                omega0: config.siren_omega0,
            },
            store,
            &format!("{prefix}.time_encoder"),
            rng,
        )?;
        let nodes = NodeEmbeddingTable::new(
            node_count,
            RffEncoder::sample(config.node_frequencies, 1, config.node_sigma, rng),
        );
        let time_width = time_encoder.output_dim() + usize::from(config.with_weekend);
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = time_width + nodes.dim();
        for i in 0..config.layers {
            let out = if i + 1 == config.layers { config.out_dim } else { config.hidden };
            let w = store.fan_in_uniform(format!("{prefix}.layer{i}.w"), &[width, out], width, rng);
            let b = store.fan_in_uniform(format!("{prefix}.layer{i}.b"), &[out], width, rng);
            layers.push((w, b));
            width = out;
        }
        Ok(ConditionalNeuralField { config, time_encoder, nodes, layers })
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    /// Features for every `(batch, node, time)` triple: `coords` is
    /// `[batch, time, 2 or 3]`, the result is `[batch, node, time, out_dim]`.
    pub fn forward_batch(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        coords: ArrayView3<f64>,
        nodes: &[usize],
    ) -> Result<Var> {
        let (b, t, k) = coords.dim();
        if k < 2 {
            return Err(Error::Shape(format!("coordinates need 2 columns, got {k}")));
        }
        let pair = coords.slice(s![.., .., 0..2]);
        check_coords(&pair.iter().copied().collect::<Vec<_>>())?;
        let flat_pair = pair.to_owned().into_shape_with_order((b * t, 2)).unwrap();
        let mut time_feat = self.time_encoder.forward(graph, store, flat_pair.view());
        if self.config.with_weekend {
            if k < 3 {
                return Err(Error::Shape("weekend flag enabled but coordinates have no third column".into()));
            }
            let flag = coords
                .slice(s![.., .., 2..3])
                .to_owned()
                .into_shape_with_order((b * t, 1))
                .unwrap();
            let flag = graph.input(flag.into_dyn());
            time_feat = graph.concat(&[time_feat, flag], 1);
        }
        let codes = graph.input(self.nodes.rows(nodes)?.into_dyn());

        let (w0, b0) = self.layers[0];
        let w0 = graph.param(store, w0);
        let b0 = graph.param(store, b0);
        let time_width = graph.shape(time_feat)[1];
        let code_width = self.nodes.dim();
        let w_time = graph.slice(w0, 0, 0, time_width);
        let w_node = graph.slice(w0, 0, time_width, code_width);
        // concat(time, node)·W = time·W_time + node·W_node
        let time_part = graph.linear(time_feat, w_time, Some(b0));
        let width = graph.shape(time_part)[1];
        let time_part = graph.reshape(time_part, &[b, t, width]);
        let node_part = graph.linear(codes, w_node, None);
        let mut h = graph.outer_add(time_part, node_part);
        for &(w, bias) in &self.layers[1..] {
            h = graph.relu(h);
            let (w, bias) = (graph.param(store, w), graph.param(store, bias));
            h = graph.linear(h, w, Some(bias));
        }
        Ok(h)
    }

    /// Global features `[time, node, out_dim]` for one coordinate sequence.
    pub fn evaluate(&self, store: &ParamStore, coords: ArrayView2<f64>, nodes: &[usize]) -> Result<Array3<f64>> {
        let mut graph = Graph::new();
        let c3 = coords.insert_axis(Axis(0));
        let out = self.forward_batch(&mut graph, store, c3, nodes)?;
        let v = graph.value(out).clone();
        let v = v.index_axis_move(Axis(0), 0);
        let v = v.permuted_axes(vec![1, 0, 2]);
        Ok(v.as_standard_layout().into_owned().into_dimensionality().unwrap())
    }
}

/// Single-hidden-layer coordinate network used for series reconstruction.
///
/// * Fourier features: `γ(x) → Linear → ReLU → Linear`
/// * sine: `sin(ω₀(xW + b)) → Linear`
/// * vanilla: `Linear → ReLU → Linear`
#[derive(Clone, Debug)]
pub struct CoordinateMlp {
    pub encoder: InputEncoder,
    pub hidden: Option<(ParamId, ParamId)>,
    pub output: (ParamId, ParamId),
}

impl CoordinateMlp {
    pub fn new<R: Rng>(
        kind: EncoderKind,
        input_dim: usize,
        hidden: usize,
        rff_frequencies: usize,
        sigma: f64,
        omega0: f64,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let output_dim = if kind == EncoderKind::Rff { 2 * rff_frequencies } else { hidden };
        let encoder = make_encoder(
            &EncoderSpec { kind, input_dim, output_dim, sigma, omega0 },
            store,
            "mlp.encoder",
            rng,
        )?;
        let hidden_layer = if kind == EncoderKind::Rff {
            let w = store.fan_in_uniform("mlp.hidden.w", &[output_dim, hidden], output_dim, rng);
            let b = store.fan_in_uniform("mlp.hidden.b", &[hidden], output_dim, rng);
            Some((w, b))
        } else {
            None
        };
        let w = store.fan_in_uniform("mlp.out.w", &[hidden, 1], hidden, rng);
        let b = store.fan_in_uniform("mlp.out.b", &[1], hidden, rng);
        Ok(CoordinateMlp { encoder, hidden: hidden_layer, output: (w, b) })
    }

    /// Predictions `[rows, 1]` for coordinates `[rows, d_in]`.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: ArrayView2<f64>) -> Var {
        let mut h = self.encoder.forward(graph, store, x);
        if let Some((w, b)) = self.hidden {
            let (w, b) = (graph.param(store, w), graph.param(store, b));
            h = graph.linear(h, w, Some(b));
        }
        if self.encoder.kind() != EncoderKind::Siren {
            h = graph.relu(h);
        }
        let (w, b) = (graph.param(store, self.output.0), graph.param(store, self.output.1));
        graph.linear(h, w, Some(b))
    }
}


#[cfg(test)]
mod tests;
