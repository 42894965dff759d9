//! A small reverse-mode automatic differentiation tape over `f64` tensors.
//!
//! Every forward operation records its inputs and result on a [`Graph`]; a
//! single call to [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar with respect to every recorded value. Parameters live
//! outside the tape in a [`ParamStore`] and are copied onto it per forward pass.
//!
//! Spatio-temporal tensors use the channels-last layout `[batch, node, time,
//! channel]`, so 1×1 convolutions are plain [`Graph::linear`] calls and the
//! temporal convolutions lower to a single GEMM via im2col.

mod ops;
mod optim;
mod params;

pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{uniform, Param, ParamId, ParamStore};

use ndarray::{ArrayD, IxDyn};
use std::collections::HashMap;

pub type Tensor = ArrayD<f64>;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Batch statistics produced by a training-mode batch norm, to be folded into
/// the running buffers once the step completes.
#[derive(Clone, Debug)]
pub struct RunningUpdate {
    pub mean_buffer: ParamId,
    pub var_buffer: ParamId,
    pub batch_mean: ndarray::Array1<f64>,
    pub batch_var_unbiased: ndarray::Array1<f64>,
}

pub(crate) enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sin(Var),
    MulConst { x: Var, c: Tensor },
    Slice { x: Var, axis: usize, start: usize },
    PadFront { x: Var, axis: usize, n: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape(Var),
    TemporalConv { x: Var, w: Var, b: Option<Var>, start: usize, dilation: usize },
    MultiConv { x: Var, branches: Vec<(Var, Option<Var>)>, dilation: usize },
    NodeMix { adj: Var, h: Var },
    OuterAdd { time: Var, node: Var },
    MatMul(Var, Var),
    Transpose(Var),
    RowNormSelfLoop(Var),
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: ndarray::Array1<f64> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, mean: ndarray::Array1<f64>, inv_std: ndarray::Array1<f64> },
    MaskedMae { pred: Var, target: Tensor, mask: Tensor, count: f64 },
    Sum(Var),
}

/// The tape. Cheap to create; build one per forward pass.
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    param_vars: HashMap<ParamId, Var>,
    running_updates: Vec<RunningUpdate>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            param_vars: HashMap::new(),
            running_updates: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(standard_layout(value));
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Records a leaf value (input data or a constant).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Places a parameter on the tape. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.input(store.value(id).clone());
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn record_running_update(&mut self, update: RunningUpdate) {
        self.running_updates.push(update);
    }

    pub fn take_running_updates(&mut self) -> Vec<RunningUpdate> {
        std::mem::take(&mut self.running_updates)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.values[loss.0].len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(ArrayD::from_elem(self.values[loss.0].raw_dim(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            ops::backprop(self, i, &g, &mut grads);
            // Only leaves (inputs and parameters) are read back.
            if matches!(self.ops[i], Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Gradients { grads, params }
    }
}

pub(crate) fn standard_layout(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

pub(crate) fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(standard_layout(g)),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient for a leaf `v`, zeros if `v` did not influence the loss.
    pub fn get(&self, graph: &Graph, v: Var) -> Tensor {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| ArrayD::zeros(IxDyn(graph.shape(v))))
    }

    /// Gradients of every parameter that was placed on the tape, in id order.
    pub fn params(&self, graph: &Graph) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .map(|&(id, v)| (id, self.get(graph, v)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
