use super::{accumulate, Graph, Op, ParamId, RunningUpdate, Tensor, Var};
use ndarray::{s, Array1, Array2, ArrayD, ArrayView2, Axis, IxDyn, Zip};

fn as_matrix(t: &Tensor, cols: usize) -> ArrayView2<'_, f64> {
    let rows = t.len().checked_div(cols).unwrap_or(0);
    t.view()
        .into_shape_with_order((rows, cols))
        .expect("tensor must be in standard layout")
}

/// Reshape that tolerates column-major results of matrix products.
fn reshaped<D: ndarray::Dimension>(a: ndarray::Array<f64, D>, shape: &[usize]) -> Tensor {
    standard(a.into_dyn()).into_shape_with_order(IxDyn(shape)).unwrap()
}

fn standard(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

/// `(outer, axis length, inner)` of a standard-layout shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Contiguous sub-range `start..start + len` of `axis`.
fn extract(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, full, inner) = split_at_axis(x.shape(), axis);
    let xs = x.as_slice().expect("standard layout");
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&xs[base..base + len * inner]);
    }
    ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap()
}

/// Writes `src` into `dst` at offset `start` of `axis`.
fn insert(dst: &mut Tensor, src: &Tensor, axis: usize, start: usize) {
    let (outer, full, inner) = split_at_axis(dst.shape(), axis);
    let len = src.shape()[axis];
    let ds = dst.as_slice_mut().expect("standard layout");
    let ss = src.as_slice().expect("standard layout");
    for o in 0..outer {
        let base = (o * full + start) * inner;
        ds[base..base + len * inner].copy_from_slice(&ss[o * len * inner..(o + 1) * len * inner]);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Channel-wise reduction over every axis except the last.
fn channel_sum(t: &Tensor) -> Array1<f64> {
    let c = *t.shape().last().unwrap();
    as_matrix(t, c).sum_axis(Axis(0))
}

fn im2col(x: &Tensor, k: usize, start: usize, dilation: usize, out_len: usize) -> Array2<f64> {
    let sh = x.shape();
    let (b, n, l, c) = (sh[0], sh[1], sh[2], sh[3]);
    let xs = x.as_slice().expect("standard layout");
    let mut col = Array2::<f64>::zeros((b * n * out_len, k * c));
    let cs = col.as_slice_mut().unwrap();
    let row_len = k * c;
    for bn in 0..b * n {
        let base = bn * l * c;
        for t in 0..out_len {
            let row = (bn * out_len + t) * row_len;
            for j in 0..k {
                let src = base + (start + t + j * dilation) * c;
                cs[row + j * c..row + (j + 1) * c].copy_from_slice(&xs[src..src + c]);
            }
        }
    }
    col
}

fn col2im(
    col: &Array2<f64>,
    shape: &[usize],
    k: usize,
    start: usize,
    dilation: usize,
    out_len: usize,
) -> Tensor {
    let (b, n, l, c) = (shape[0], shape[1], shape[2], shape[3]);
    let mut gx = ArrayD::<f64>::zeros(IxDyn(shape));
    let gs = gx.as_slice_mut().unwrap();
    let col = col.as_standard_layout();
    let cs = col.as_slice().unwrap();
    let row_len = k * c;
    for bn in 0..b * n {
        let base = bn * l * c;
        for t in 0..out_len {
            let row = (bn * out_len + t) * row_len;
            for j in 0..k {
                let dst = base + (start + t + j * dilation) * c;
                for ch in 0..c {
                    gs[dst + ch] += cs[row + j * c + ch];
                }
            }
        }
    }
    gx
}

impl Graph {
    /// `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(*xv.shape().last().unwrap(), cin, "linear: input width mismatch");
        let mut y = as_matrix(xv, cin).dot(&as_matrix(wv, cout));
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.len(), cout, "linear: bias width mismatch");
            y += &bv.view().into_shape_with_order(cout).unwrap();
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let y = reshaped(y, &shape);
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let y = self.value(a) - self.value(b);
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    /// `x * scale + shift` with scalar constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).mapv(|v| v * scale + shift);
        self.push(y, Op::Affine { x, scale })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(f64::sin);
        self.push(y, Op::Sin(x))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        assert_eq!(self.shape(x), c.shape(), "mul_const: shape mismatch");
        let y = self.value(x) * &c;
        self.push(y, Op::MulConst { x, c })
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        assert!(start + len <= self.shape(x)[axis], "slice: range out of bounds");
        let y = extract(self.value(x), axis, start, len);
        self.push(y, Op::Slice { x, axis, start })
    }

    /// Prepends `n` zeros along `axis`.
    pub fn pad_front(&mut self, x: Var, axis: usize, n: usize) -> Var {
        if n == 0 {
            return x;
        }
        let xv = self.value(x);
        let mut shape = xv.shape().to_vec();
        shape[axis] += n;
        let mut y = ArrayD::<f64>::zeros(IxDyn(&shape));
        insert(&mut y, xv, axis, n);
        self.push(y, Op::PadFront { x, axis, n })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        let mut shape = self.shape(xs[0]).to_vec();
        shape[axis] = 0;
        for &v in xs {
            let sh = self.shape(v);
            assert!(
                sh.len() == shape.len() && (0..sh.len()).all(|d| d == axis || sh[d] == shape[d]),
                "concat: shape mismatch"
            );
            shape[axis] += sh[axis];
        }
        let mut y = ArrayD::<f64>::zeros(IxDyn(&shape));
        let mut offset = 0;
        for &v in xs {
            insert(&mut y, self.value(v), axis, offset);
            offset += self.shape(v)[axis];
        }
        self.push(y, Op::Concat { xs: xs.to_vec(), axis })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self
            .value(x)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(y, Op::Reshape(x))
    }

    /// Valid temporal convolution on `[batch, node, time, cin]`.
    ///
    /// `w` is `[k·cin, cout]` with taps stacked tap-major; output step `t`
    /// reads input steps `start + t + j·dilation` for `j < k`.
    pub fn temporal_conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        start: usize,
        dilation: usize,
        out_len: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let sh = xv.shape();
        assert_eq!(sh.len(), 4, "temporal_conv expects [batch, node, time, channel]");
        let cin = sh[3];
        let cout = wv.shape()[1];
        assert_eq!(wv.shape()[0] % cin, 0, "temporal_conv: weight rows not a multiple of cin");
        let k = wv.shape()[0] / cin;
        assert!(
            start + out_len.saturating_sub(1) + (k - 1) * dilation < sh[2] || out_len == 0,
            "temporal_conv: receptive field exceeds input length"
        );
        let col = im2col(xv, k, start, dilation, out_len);
        let mut y = col.dot(&as_matrix(wv, cout));
        if let Some(b) = b {
            y += &self.value(b).view().into_shape_with_order(cout).unwrap();
        }
        let y = reshaped(y, &[sh[0], sh[1], out_len, cout]);
        self.push(y, Op::TemporalConv { x, w, b, start, dilation })
    }

    /// Several valid temporal convolutions over one shared input, right-aligned
    /// to the widest kernel and stacked along the channel axis. Branch weights
    /// are `[k·cin, cout_i]` like [`Graph::temporal_conv`].
    pub fn multi_conv(&mut self, x: Var, branches: &[(Var, Option<Var>)], dilation: usize, out_len: usize) -> Var {
        let xv = self.value(x);
        let sh = xv.shape();
        assert_eq!(sh.len(), 4, "multi_conv expects [batch, node, time, channel]");
        let cin = sh[3];
        let kernels: Vec<usize> = branches.iter().map(|(w, _)| self.shape(*w)[0] / cin).collect();
        let kmax = *kernels.iter().max().expect("multi_conv: no branches");
        assert!(out_len > 0 && (kmax - 1) * dilation + out_len <= sh[2], "multi_conv: receptive field exceeds input length");
        let col = im2col(xv, kmax, 0, dilation, out_len);
        let total: usize = branches.iter().map(|(w, _)| self.shape(*w)[1]).sum();
        let mut y = Array2::<f64>::zeros((col.nrows(), total));
        let mut off = 0;
        for (&(w, b), &k) in branches.iter().zip(&kernels) {
            let wv = self.value(w);
            assert_eq!(wv.shape()[0], k * cin, "multi_conv: weight rows not a multiple of cin");
            let cout = wv.shape()[1];
            let xs = col.slice(s![.., (kmax - k) * cin..]);
            let mut ys = y.slice_mut(s![.., off..off + cout]);
            ndarray::linalg::general_mat_mul(1.0, &xs, &as_matrix(wv, cout), 0.0, &mut ys);
            if let Some(b) = b {
                ys += &self.value(b).view().into_shape_with_order(cout).unwrap();
            }
            off += cout;
        }
        let y = reshaped(y, &[sh[0], sh[1], out_len, total]);
        self.push(y, Op::MultiConv { x, branches: branches.to_vec(), dilation })
    }

    /// Graph propagation `out[b] = adj · h[b]` over the node axis of `[batch, node, time, channel]`.
    pub fn node_mix(&mut self, adj: Var, h: Var) -> Var {
        let av = self.value(adj);
        let hv = self.value(h);
        let sh = hv.shape();
        let n = sh[1];
        assert_eq!(av.shape(), &[n, n], "node_mix: adjacency must be N×N");
        let inner = sh[2] * sh[3];
        let a2 = as_matrix(av, n);
        let mut y = ArrayD::<f64>::zeros(IxDyn(sh));
        for b in 0..sh[0] {
            let hb = hv
                .index_axis(Axis(0), b)
                .into_shape_with_order((n, inner))
                .unwrap();
            let mut yb = y
                .index_axis_mut(Axis(0), b)
                .into_shape_with_order((n, inner))
                .unwrap();
            ndarray::linalg::general_mat_mul(1.0, &a2, &hb, 0.0, &mut yb);
        }
        self.push(y, Op::NodeMix { adj, h })
    }

    /// `out[b, n, t, :] = time[b, t, :] + node[n, :]`.
    pub fn outer_add(&mut self, time: Var, node: Var) -> Var {
        let tv = self.value(time);
        let nv = self.value(node);
        assert_eq!(tv.ndim(), 3, "outer_add: time part must be [batch, time, width]");
        assert_eq!(nv.ndim(), 2, "outer_add: node part must be [node, width]");
        let (b, t, w) = (tv.shape()[0], tv.shape()[1], tv.shape()[2]);
        let n = nv.shape()[0];
        assert_eq!(nv.shape()[1], w, "outer_add: width mismatch");
        let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, n, t, w]));
        for bi in 0..b {
            for ni in 0..n {
                let mut dst = y.slice_mut(s![bi, ni, .., ..]);
                dst.assign(&tv.slice(s![bi, .., ..]));
                dst += &nv.slice(s![ni, ..]);
            }
        }
        self.push(y, Op::OuterAdd { time, node })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.ndim(), 2);
        assert_eq!(bv.ndim(), 2);
        let y = as_matrix(av, av.shape()[1]).dot(&as_matrix(bv, bv.shape()[1]));
        self.push(y.into_dyn(), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.ndim(), 2);
        let y = av.t().as_standard_layout().into_owned();
        self.push(y, Op::Transpose(a))
    }

    /// `(A + I)` divided by its row sums. Entries of `A` must be nonnegative.
    pub fn row_normalize_self_loop(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.shape()[0];
        assert_eq!(av.shape(), &[n, n]);
        let mut y = av.clone();
        for i in 0..n {
            y[[i, i]] += 1.0;
        }
        for mut row in y.axis_iter_mut(Axis(0)) {
            let s: f64 = row.sum();
            assert!(s > 0.0, "row of A + I sums to {s}; adjacency must be nonnegative");
            row /= s;
        }
        self.push(y, Op::RowNormSelfLoop(a))
    }

    /// Batch norm in training mode: statistics over every axis but the last.
    /// The batch statistics are queued for the running buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean_buffer: ParamId,
        var_buffer: ParamId,
        eps: f64,
    ) -> Var {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap();
        let xs = xv.as_slice().expect("standard layout");
        let m = (xs.len() / c) as f64;
        let mut mean = Array1::<f64>::zeros(c);
        for row in xs.chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean /= m;
        let mut var = Array1::<f64>::zeros(c);
        for row in xs.chunks_exact(c) {
            for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var /= m;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let g = self.value(gamma).as_slice().unwrap().to_vec();
        let bta = self.value(beta).as_slice().unwrap().to_vec();
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for ((row, xh), yr) in xs.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xh[ch] = h;
                yr[ch] = h * g[ch] + bta[ch];
            }
        }
        let shape = xv.shape().to_vec();
        let y = ArrayD::from_shape_vec(IxDyn(&shape), y).unwrap();
        let xhat = ArrayD::from_shape_vec(IxDyn(&shape), xhat).unwrap();
        let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
        self.record_running_update(RunningUpdate {
            mean_buffer,
            var_buffer,
            batch_mean: mean,
            batch_var_unbiased: unbiased,
        });
        self.push(y, Op::BatchNormTrain { x, gamma, beta, xhat, inv_std })
    }

    /// Batch norm in evaluation mode with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Array1<f64>,
        var: &Array1<f64>,
        eps: f64,
    ) -> Var {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let g = self.value(gamma).view().into_shape_with_order(c).unwrap().to_owned();
        let bta = self.value(beta).view().into_shape_with_order(c).unwrap().to_owned();
        let y2 = (&as_matrix(xv, c) - mean) * &inv_std * &g + &bta;
        let y = reshaped(y2, xv.shape());
        self.push(
            y,
            Op::BatchNormEval { x, gamma, beta, mean: mean.clone(), inv_std },
        )
    }

    /// Mean absolute error over cells where `mask` is 1. Returns `None` when
    /// the mask selects nothing.
    pub fn masked_mae(&mut self, pred: Var, target: Tensor, mask: Tensor) -> Option<Var> {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "masked_mae: target shape");
        assert_eq!(pv.shape(), mask.shape(), "masked_mae: mask shape");
        let count: f64 = mask.sum();
        if count <= 0.0 {
            return None;
        }
        let mut total = 0.0;
        Zip::from(pv).and(&target).and(&mask).for_each(|&p, &t, &m| {
            if m != 0.0 {
                total += (p - t).abs();
            }
        });
        let y = ArrayD::from_elem(IxDyn(&[]), total / count);
        Some(self.push(y, Op::MaskedMae { pred, target, mask, count }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = ArrayD::from_elem(IxDyn(&[]), self.value(x).sum());
        self.push(y, Op::Sum(x))
    }
}

pub(super) fn backprop(graph: &Graph, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: Var| &graph.values[v.0];
    match &graph.ops[i] {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let xv = val(*x);
            let wv = val(*w);
            let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
            let g2 = as_matrix(g, cout);
            let x2 = as_matrix(xv, cin);
            let gx = g2.dot(&as_matrix(wv, cout).t());
            accumulate(grads, *x, reshaped(gx, xv.shape()));
            accumulate(grads, *w, x2.t().dot(&g2).into_dyn());
            if let Some(b) = b {
                let gb = g2.sum_axis(Axis(0));
                accumulate(grads, *b, reshaped(gb, val(*b).shape()));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, -g);
        }
        Op::Mul(a, b) => {
            accumulate(grads, *a, g * val(*b));
            accumulate(grads, *b, g * val(*a));
        }
        Op::Affine { x, scale } => accumulate(grads, *x, g * *scale),
        Op::Relu(x) => {
            let mut gx = g.clone();
            Zip::from(&mut gx).and(val(*x)).for_each(|gv, &xv| {
                if xv <= 0.0 {
                    *gv = 0.0;
                }
            });
            accumulate(grads, *x, gx);
        }
        Op::Tanh(x) => {
            let y = &graph.values[i];
            let mut gx = g.clone();
            Zip::from(&mut gx).and(y).for_each(|gv, &yv| *gv *= 1.0 - yv * yv);
            accumulate(grads, *x, gx);
        }
        Op::Sigmoid(x) => {
            let y = &graph.values[i];
            let mut gx = g.clone();
            Zip::from(&mut gx).and(y).for_each(|gv, &yv| *gv *= yv * (1.0 - yv));
            accumulate(grads, *x, gx);
        }
        Op::Sin(x) => {
            let mut gx = g.clone();
            Zip::from(&mut gx).and(val(*x)).for_each(|gv, &xv| *gv *= xv.cos());
            accumulate(grads, *x, gx);
        }
        Op::MulConst { x, c } => accumulate(grads, *x, g * c),
        Op::Slice { x, axis, start } => {
            let mut gx = ArrayD::<f64>::zeros(IxDyn(val(*x).shape()));
            insert(&mut gx, g, *axis, *start);
            accumulate(grads, *x, gx);
        }
        Op::PadFront { x, axis, n } => {
            let len = val(*x).shape()[*axis];
            accumulate(grads, *x, extract(g, *axis, *n, len));
        }
        Op::Concat { xs, axis } => {
            let mut offset = 0;
            for &x in xs {
                let len = val(x).shape()[*axis];
                accumulate(grads, x, extract(g, *axis, offset, len));
                offset += len;
            }
        }
        Op::Reshape(x) => {
            let gx = reshaped(g.clone(), val(*x).shape());
            accumulate(grads, *x, gx);
        }
        Op::TemporalConv { x, w, b, start, dilation } => {
            let xv = val(*x);
            let wv = val(*w);
            let cin = xv.shape()[3];
            let cout = wv.shape()[1];
            let k = wv.shape()[0] / cin;
            let out_len = g.shape()[2];
            let col = im2col(xv, k, *start, *dilation, out_len);
            let g2 = as_matrix(g, cout);
            accumulate(grads, *w, col.t().dot(&g2).into_dyn());
            let gcol = g2.dot(&as_matrix(wv, cout).t());
            accumulate(grads, *x, col2im(&gcol, xv.shape(), k, *start, *dilation, out_len));
            if let Some(b) = b {
                let gb = g2.sum_axis(Axis(0));
                accumulate(grads, *b, reshaped(gb, val(*b).shape()));
            }
        }
        Op::MultiConv { x, branches, dilation } => {
            let xv = val(*x);
            let cin = xv.shape()[3];
            let out_len = g.shape()[2];
            let total = g.shape()[3];
            let kmax = branches.iter().map(|(w, _)| val(*w).shape()[0] / cin).max().unwrap();
            let col = im2col(xv, kmax, 0, *dilation, out_len);
            let g2 = as_matrix(g, total);
            let mut gcol = Array2::<f64>::zeros(col.raw_dim());
            let mut off = 0;
            for (w, b) in branches {
                let wv = val(*w);
                let (rows, cout) = (wv.shape()[0], wv.shape()[1]);
                let first = kmax * cin - rows;
                let gk = g2.slice(s![.., off..off + cout]);
                accumulate(grads, *w, col.slice(s![.., first..]).t().dot(&gk).into_dyn());
                let mut gc = gcol.slice_mut(s![.., first..]);
                ndarray::linalg::general_mat_mul(1.0, &gk, &as_matrix(wv, cout).t(), 1.0, &mut gc);
                if let Some(b) = b {
                    accumulate(grads, *b, reshaped(gk.sum_axis(Axis(0)), val(*b).shape()));
                }
                off += cout;
            }
            accumulate(grads, *x, col2im(&gcol, xv.shape(), kmax, 0, *dilation, out_len));
        }
        Op::NodeMix { adj, h } => {
            let av = val(*adj);
            let hv = val(*h);
            let sh = hv.shape();
            let n = sh[1];
            let inner = sh[2] * sh[3];
            let a2 = as_matrix(av, n);
            let mut ga = Array2::<f64>::zeros((n, n));
            let mut gh = ArrayD::<f64>::zeros(IxDyn(sh));
            for bi in 0..sh[0] {
                let gb = g.index_axis(Axis(0), bi).into_shape_with_order((n, inner)).unwrap();
                let hb = hv.index_axis(Axis(0), bi).into_shape_with_order((n, inner)).unwrap();
                ndarray::linalg::general_mat_mul(1.0, &gb, &hb.t(), 1.0, &mut ga);
                let mut ghb = gh
                    .index_axis_mut(Axis(0), bi)
                    .into_shape_with_order((n, inner))
                    .unwrap();
                ndarray::linalg::general_mat_mul(1.0, &a2.t(), &gb, 0.0, &mut ghb);
            }
            accumulate(grads, *adj, ga.into_dyn());
            accumulate(grads, *h, gh);
        }
        Op::OuterAdd { time, node } => {
            let gt = g.sum_axis(Axis(1));
            let gn = g.sum_axis(Axis(2)).sum_axis(Axis(0));
            accumulate(grads, *time, gt);
            accumulate(grads, *node, gn);
        }
        Op::MatMul(a, b) => {
            let av = val(*a);
            let bv = val(*b);
            let g2 = as_matrix(g, g.shape()[1]);
            let a2 = as_matrix(av, av.shape()[1]);
            let b2 = as_matrix(bv, bv.shape()[1]);
            accumulate(grads, *a, g2.dot(&b2.t()).into_dyn());
            accumulate(grads, *b, a2.t().dot(&g2).into_dyn());
        }
        Op::Transpose(a) => {
            accumulate(grads, *a, g.t().as_standard_layout().into_owned());
        }
        Op::RowNormSelfLoop(a) => {
            let av = val(*a);
            let y = &graph.values[i];
            let n = av.shape()[0];
            let mut ga = ArrayD::<f64>::zeros(IxDyn(&[n, n]));
            for r in 0..n {
                let s: f64 = av.slice(s![r, ..]).sum() + 1.0;
                let dot: f64 = (&g.slice(s![r, ..]) * &y.slice(s![r, ..])).sum();
                for c in 0..n {
                    ga[[r, c]] = (g[[r, c]] - dot) / s;
                }
            }
            accumulate(grads, *a, ga);
        }
        Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
            let c = inv_std.len();
            let gs = g.as_slice().expect("standard layout");
            let xh = xhat.as_slice().unwrap();
            let m = (gs.len() / c) as f64;
            let mut gsum = Array1::<f64>::zeros(c);
            let mut gxh = Array1::<f64>::zeros(c);
            for (gr, hr) in gs.chunks_exact(c).zip(xh.chunks_exact(c)) {
                for ch in 0..c {
                    gsum[ch] += gr[ch];
                    gxh[ch] += gr[ch] * hr[ch];
                }
            }
            let gam = val(*gamma).as_slice().unwrap();
            let scale: Vec<f64> = (0..c).map(|ch| gam[ch] * inv_std[ch] / m).collect();
            let mut gx = vec![0.0; gs.len()];
            for ((gr, hr), out) in gs.chunks_exact(c).zip(xh.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                for ch in 0..c {
                    out[ch] = (gr[ch] * m - gsum[ch] - hr[ch] * gxh[ch]) * scale[ch];
                }
            }
            accumulate(grads, *x, ArrayD::from_shape_vec(IxDyn(g.shape()), gx).unwrap());
            accumulate(grads, *gamma, reshaped(gxh, val(*gamma).shape()));
            accumulate(grads, *beta, reshaped(gsum, val(*beta).shape()));
        }
        Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
            let c = inv_std.len();
            let g2 = as_matrix(g, c);
            let gam = val(*gamma).view().into_shape_with_order(c).unwrap().to_owned();
            let gx = &g2 * &(&gam * inv_std);
            accumulate(grads, *x, reshaped(gx, g.shape()));
            let xh = (&as_matrix(val(*x), c) - mean) * inv_std;
            let gg = (&g2 * &xh).sum_axis(Axis(0));
            accumulate(grads, *gamma, reshaped(gg, val(*gamma).shape()));
            let gb = channel_sum(g);
            accumulate(grads, *beta, reshaped(gb, val(*beta).shape()));
        }
        Op::MaskedMae { pred, target, mask, count } => {
            let scale = g.iter().next().copied().unwrap_or(0.0) / count;
            let mut gp = ArrayD::<f64>::zeros(IxDyn(target.shape()));
            Zip::from(&mut gp)
                .and(val(*pred))
                .and(target)
                .and(mask)
                .for_each(|gv, &p, &t, &m| {
                    if m != 0.0 && p != t {
                        *gv = scale * (p - t).signum();
                    }
                });
            accumulate(grads, *pred, gp);
        }
        Op::Sum(x) => {
            let s = g.iter().next().copied().unwrap_or(0.0);
            accumulate(grads, *x, ArrayD::from_elem(IxDyn(val(*x).shape()), s));
        }
    }
}
