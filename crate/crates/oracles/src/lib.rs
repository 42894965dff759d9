//! Straight-line reference evaluators.
//!
//! Nothing here depends on `seafield-core`: every routine is written from the
//! defining formula with explicit loops over plain vectors, so the optimized
//! tensor code can be checked against an independent derivation. Speed is
//! irrelevant.

use std::f64::consts::PI;

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Nd {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Nd {
    pub fn zeros(shape: &[usize]) -> Self {
        Nd { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Nd { shape: shape.to_vec(), data }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range on axis {i}");
            off = off * dim + ix;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn add_at(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] += v;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Mae,
    Rmse,
    Mape,
    Smape,
}

/// Metric over cells with `mask[i] == true`. `None` when nothing is observed.
pub fn loop_metric(kind: MetricKind, pred: &[f64], target: &[f64], mask: &[bool]) -> Option<f64> {
    assert_eq!(pred.len(), target.len());
    assert_eq!(pred.len(), mask.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let e = pred[i] - target[i];
        let term = match kind {
            MetricKind::Mae => e.abs(),
            MetricKind::Rmse => e * e,
            MetricKind::Mape => (e / target[i]).abs(),
            MetricKind::Smape => (e / (pred[i] + target[i])).abs(),
        };
        total += term;
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let mean = total / count as f64;
    Some(if kind == MetricKind::Rmse { mean.sqrt() } else { mean })
}

/// Mean and population standard deviation of the observed cells.
pub fn loop_masked_mean_std(values: &[f64], mask: &[bool]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut n = 0.0;
    for i in 0..values.len() {
        if mask[i] {
            sum += values[i];
            n += 1.0;
        }
    }
    let mean = sum / n;
    let mut sq = 0.0;
    for i in 0..values.len() {
        if mask[i] {
            sq += (values[i] - mean) * (values[i] - mean);
        }
    }
    (mean, (sq / n).sqrt())
}

/// `[cos(2π b_1·x) … cos(2π b_m·x), sin(2π b_1·x) … sin(2π b_m·x)]`.
pub fn loop_rff(b: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut out = vec![0.0; 2 * m];
    for r in 0..m {
        let mut dot = 0.0;
        for c in 0..x.len() {
            dot += b[r][c] * x[c];
        }
        out[r] = (2.0 * PI * dot).cos();
        out[m + r] = (2.0 * PI * dot).sin();
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated fusion on rows of width `c`. `w` is `2c × c`, `b` has length `c`.
pub fn loop_gated_fuse(local: &[Vec<f64>], global: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let c = b.len();
    let mut out = Vec::new();
    for r in 0..local.len() {
        let mut row = vec![0.0; c];
        for j in 0..c {
            let mut pre = b[j];
            for i in 0..c {
                pre += local[r][i] * w[i][j];
                pre += global[r][i] * w[c + i][j];
            }
            let z = sigmoid(pre);
            row[j] = (1.0 - z) * local[r][j] + z * global[r][j];
        }
        out.push(row);
    }
    out
}

/// Keeps the `k` largest entries of each row by full sort; ties broken by the
/// lower column index. Everything else becomes zero.
pub fn loop_topk_rows(a: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for row in a {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap().then(i.cmp(&j)));
        let mut kept = vec![0.0; row.len()];
        for &col in order.iter().take(k) {
            kept[col] = row[col];
        }
        out.push(kept);
    }
    out
}

/// `ReLU(tanh(α(M1·M2ᵀ − M2·M1ᵀ)))` then row-wise top-k.
pub fn loop_learn_graph(m1: &[Vec<f64>], m2: &[Vec<f64>], alpha: f64, k: usize) -> Vec<Vec<f64>> {
    let n = m1.len();
    let d = m1[0].len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..d {
                s += m1[i][t] * m2[j][t] - m2[i][t] * m1[j][t];
            }
            a[i][j] = (alpha * s).tanh().max(0.0);
        }
    }
    loop_topk_rows(&a, k)
}

/// `(A + I)` divided by row sums.
pub fn loop_row_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i][j] + if i == j { 1.0 } else { 0.0 };
        }
        for j in 0..n {
            out[i][j] = (a[i][j] + if i == j { 1.0 } else { 0.0 }) / s;
        }
    }
    out
}

/// Hop states of mix-hop propagation for features `h[node][feature]`:
/// `H0 = h`, `Hk = β·h + (1−β)·Ã·H(k−1)` with `Ã` the self-loop row
/// normalization of `adj`. Returns `[H0, …, HK]`.
pub fn loop_mixhop_states(adj: &[Vec<f64>], h: &[Vec<f64>], depth: usize, beta: f64) -> Vec<Vec<Vec<f64>>> {
    let norm = loop_row_normalize(adj);
    let n = h.len();
    let f = h[0].len();
    let mut states = vec![h.to_vec()];
    for _ in 0..depth {
        let prev = states.last().unwrap().clone();
        let mut next = vec![vec![0.0; f]; n];
        for v in 0..n {
            for c in 0..f {
                let mut agg = 0.0;
                for w in 0..n {
                    agg += norm[v][w] * prev[w][c];
                }
                next[v][c] = beta * h[v][c] + (1.0 - beta) * agg;
            }
        }
        states.push(next);
    }
    states
}

/// Mix-hop output `Σ_k Hk·Wk (+ bias)`; `weights[k]` is `c_in × c_out`.
pub fn loop_mixhop(
    adj: &[Vec<f64>],
    h: &[Vec<f64>],
    depth: usize,
    beta: f64,
    weights: &[Vec<Vec<f64>>],
    bias: &[f64],
) -> Vec<Vec<f64>> {
    let states = loop_mixhop_states(adj, h, depth, beta);
    let n = h.len();
    let cout = bias.len();
    let mut out = vec![bias.to_vec(); n];
    for (k, state) in states.iter().enumerate() {
        for v in 0..n {
            for j in 0..cout {
                for (i, &x) in state[v].iter().enumerate() {
                    out[v][j] += x * weights[k][i][j];
                }
            }
        }
    }
    out
}

/// Valid dilated temporal convolution of one series `x[time][c_in]` with
/// kernel `w[tap][c_in][c_out]`, reading from input offset `start`.
pub fn loop_temporal_conv(
    x: &[Vec<f64>],
    w: &[Vec<Vec<f64>>],
    bias: &[f64],
    start: usize,
    dilation: usize,
    out_len: usize,
) -> Vec<Vec<f64>> {
    let cout = bias.len();
    let mut out = vec![bias.to_vec(); out_len];
    for t in 0..out_len {
        for (j, tap) in w.iter().enumerate() {
            let src = &x[start + t + j * dilation];
            for (i, &xv) in src.iter().enumerate() {
                for o in 0..cout {
                    out[t][o] += xv * tap[i][o];
                }
            }
        }
    }
    out
}

/// Time-axis length after a valid convolution.
pub fn conv_out_len(len: usize, kernel: usize, dilation: usize) -> Option<usize> {
    let span = (kernel - 1) * dilation;
    if len > span {
        Some(len - span)
    } else {
        None
    }
}

/// Receptive field of a stack of valid convolutions.
pub fn receptive_field(kernels: &[usize], dilations: &[usize]) -> usize {
    1 + kernels
        .iter()
        .zip(dilations)
        .map(|(&k, &d)| (k - 1) * d)
        .sum::<usize>()
}

/// Sample autocorrelation at `lag`.
pub fn loop_autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        den += (x[i] - mean) * (x[i] - mean);
        if i + lag < n {
            num += (x[i] - mean) * (x[i + lag] - mean);
        }
    }
    num / den
}

/// Day of week for a Gregorian date, Monday = 0 (Zeller's congruence).
pub fn zeller_weekday(year: i32, month: u32, day: u32) -> u32 {
    let (y, m) = if month < 3 { (year - 1, month + 12) } else { (year, month) };
    let k = y.rem_euclid(100);
    let j = y.div_euclid(100);
    let h = (day as i32 + (13 * (m as i32 + 1)) / 5 + k + k / 4 + j / 4 + 5 * j).rem_euclid(7);
    // h: 0 = Saturday, 1 = Sunday, 2 = Monday, ...
    ((h + 5) % 7) as u32
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub step: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonFiniteValue {
    pub index: usize,
}

/// `|a − b| / max(|a|, |b|, 1e−12)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic[i]` with the central difference of `f` at `params` for
/// each index in `indices` (all parameters when `None`).
pub fn fd_gradcheck<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    indices: Option<&[usize]>,
) -> Result<FiniteDiffReport, NonFiniteValue>
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let all: Vec<usize> = (0..params.len()).collect();
    let indices = indices.unwrap_or(&all);
    let mut work = params.to_vec();
    let mut report = FiniteDiffReport { max_rel_error: 0.0, worst_index: 0, step, checked: 0 };
    for &i in indices {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NonFiniteValue { index: i });
        }
        let numeric = (up - down) / (2.0 * step);
        let err = rel_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_of_square() {
        let f = |p: &[f64]| p[0] * p[0];
        let r = fd_gradcheck(f, &[3.0], &[6.0], 1e-5, None).unwrap();
        assert!(r.max_rel_error < 1e-7 / 6.0 + 1e-9, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn gradcheck_reports_non_finite() {
        let f = |p: &[f64]| if p[0] > 0.0 { f64::NAN } else { 0.0 };
        assert_eq!(fd_gradcheck(f, &[0.0], &[0.0], 1e-5, None), Err(NonFiniteValue { index: 0 }));
    }

    #[test]
    fn zeller_known_dates() {
        // 2012-03-01 was a Thursday, 2024-01-01 a Monday.
        assert_eq!(zeller_weekday(2012, 3, 1), 3);
        assert_eq!(zeller_weekday(2024, 1, 1), 0);
        assert_eq!(zeller_weekday(2000, 1, 1), 5);
    }

    #[test]
    fn topk_keeps_largest() {
        let a = vec![vec![0.1, 0.5, 0.3, 0.0]];
        assert_eq!(loop_topk_rows(&a, 2), vec![vec![0.0, 0.5, 0.3, 0.0]]);
    }

    #[test]
    fn receptive_field_arithmetic() {
        assert_eq!(receptive_field(&[7, 7, 7], &[1, 1, 1]), 19);
        assert_eq!(conv_out_len(12, 7, 1), Some(6));
        assert_eq!(conv_out_len(6, 7, 2), None);
    }
}
