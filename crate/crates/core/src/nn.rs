//! Layers shared by the forecasters.

use crate::autograd::{Graph, ParamId, ParamStore, RunningUpdate, Var};
use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;

/// Whether batch norm uses batch statistics (and queues running updates).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense map over the channel axis (a 1×1 convolution).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let w = store.fan_in_uniform(format!("{name}.w"), &[cin, cout], cin, rng);
        let b = store.fan_in_uniform(format!("{name}.b"), &[cout], cin, rng);
        Linear { w, b }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (w, b) = (graph.param(store, self.w), graph.param(store, self.b));
        graph.linear(x, w, Some(b))
    }
}

/// Temporal convolution with one kernel size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * cin;
        let w = store.fan_in_uniform(format!("{name}.w"), &[fan_in, cout], fan_in, rng);
        let b = store.fan_in_uniform(format!("{name}.b"), &[cout], fan_in, rng);
        Conv { w, b, kernel }
    }

    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        x: Var,
        start: usize,
        dilation: usize,
        out_len: usize,
    ) -> Var {
        let (w, b) = (graph.param(store, self.w), graph.param(store, self.b));
        graph.temporal_conv(x, w, Some(b), start, dilation, out_len)
    }
}

/// Per-channel batch norm with running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[channels])));
        let beta = store.zeros(format!("{name}.beta"), &[channels]);
        let running_mean = store.add_buffer(format!("{name}.running_mean"), ArrayD::zeros(IxDyn(&[channels])));
        let running_var = store.add_buffer(format!("{name}.running_var"), ArrayD::ones(IxDyn(&[channels])));
        BatchNorm { gamma, beta, running_mean, running_var }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Var {
        let (g, b) = (graph.param(store, self.gamma), graph.param(store, self.beta));
        match mode {
            Mode::Train => graph.batch_norm_train(x, g, b, self.running_mean, self.running_var, BN_EPS),
            Mode::Eval => {
                let mean = to_vec1(store, self.running_mean);
                let var = to_vec1(store, self.running_var);
                graph.batch_norm_eval(x, g, b, &mean, &var, BN_EPS)
            }
        }
    }
}

fn to_vec1(store: &ParamStore, id: ParamId) -> Array1<f64> {
    let v = store.value(id);
    Array1::from_iter(v.iter().copied())
}

/// Folds queued batch statistics into the running buffers.
pub fn apply_running_updates(store: &mut ParamStore, updates: &[RunningUpdate], momentum: f64) {
    for u in updates {
        let m = store.value_mut(u.mean_buffer);
        for (r, b) in m.iter_mut().zip(u.batch_mean.iter()) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        let v = store.value_mut(u.var_buffer);
        for (r, b) in v.iter_mut().zip(u.batch_var_unbiased.iter()) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

pub const DEFAULT_KERNELS: [usize; 4] = [2, 3, 6, 7];

/// Parallel temporal convolutions of different kernel sizes, right-aligned
/// and concatenated on the channel axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inception {
    pub branches: Vec<Conv>,
    pub dilation: usize,
}

/// Output widths of the branches: as equal as possible, summing to `cout`.
pub fn branch_widths(cout: usize, branches: usize) -> Vec<usize> {
    (0..branches).map(|i| cout / branches + usize::from(i < cout % branches)).collect()
}

impl Inception {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kernels: &[usize],
        cin: usize,
        cout: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(!kernels.is_empty() && dilation > 0);
        let widths = branch_widths(cout, kernels.len());
        let branches = kernels
            .iter()
            .zip(widths)
            .map(|(&k, w)| Conv::new(store, &format!("{name}.k{k}"), k, cin, w, rng))
            .collect();
        Inception { branches, dilation }
    }

    pub fn max_kernel(&self) -> usize {
        self.branches.iter().map(|c| c.kernel).max().unwrap()
    }

    /// Time steps lost to the widest branch.
    pub fn shrink(&self) -> usize {
        (self.max_kernel() - 1) * self.dilation
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        len.checked_sub(self.shrink()).filter(|&l| l > 0)
    }

    /// Graph handles for every branch, in channel order.
    pub fn branch_vars(&self, graph: &mut Graph, store: &ParamStore) -> Vec<(Var, Option<Var>)> {
        self.branches.iter().map(|c| (graph.param(store, c.w), Some(graph.param(store, c.b)))).collect()
    }

    /// Valid convolution: `[B, N, L, cin] → [B, N, L − shrink, cout]`.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let len = graph.shape(x)[2];
        let out_len = self.out_len(len).expect("inception input shorter than its receptive field");
        let branches = self.branch_vars(graph, store);
        graph.multi_conv(x, &branches, self.dilation, out_len)
    }
}

/// Receptive field of stacked valid convolutions.
pub fn receptive_field(max_kernel: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| (max_kernel - 1) * d).sum::<usize>()
}
