//! Log-domain Sinkhorn scaling with a final rounding onto the transport
//! polytope.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

#[inline]
fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: Array2<f64>,
    pub iterations: usize,
    /// L1 row-marginal error before rounding.
    pub marginal_error: f64,
}

/// Solves `min <C, T> - eps H(T)`-type scaling problems given the log of the
/// Gibbs kernel. Stops after `max_iters` sweeps or once the L1 row-marginal
/// error drops below `tol`; the returned plan is then rounded so both
/// marginals hold to machine precision.
pub fn sinkhorn_log(
    log_kernel: &Array2<f64>,
    p: ArrayView1<f64>,
    q: ArrayView1<f64>,
    max_iters: usize,
    tol: f64,
) -> SinkhornResult {
    let (n, m) = log_kernel.dim();
    let log_p = p.mapv(f64::ln);
    let log_q = q.mapv(f64::ln);
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut col_acc = vec![0.0; m];
    for it in 0..max_iters {
        iterations = it + 1;
        for i in 0..n {
            let row = log_kernel.row(i);
            f[i] = log_p[i] - logsumexp(row.iter().zip(g.iter()).map(|(k, gj)| k + gj));
        }
        column_lse(log_kernel, &f, &mut col_acc);
        for j in 0..m {
            g[j] = log_q[j] - col_acc[j];
        }
        if iterations % 5 == 0 || iterations == max_iters {
            marginal_error = row_error(log_kernel, &f, &g, p);
            if marginal_error < tol {
                break;
            }
        }
    }
    let mut plan = log_kernel.clone();
    Zip::indexed(&mut plan).for_each(|(i, j), v| *v = (*v + f[i] + g[j]).exp());
    round_to_marginals(&mut plan, p, q);
    SinkhornResult { plan, iterations, marginal_error }
}

/// Column-wise log-sum-exp of `log_kernel + f[:, None]`, computed in two
/// row-major passes.
fn column_lse(log_kernel: &Array2<f64>, f: &Array1<f64>, out: &mut [f64]) {
    let m = out.len();
    let mut max = vec![f64::NEG_INFINITY; m];
    for (i, row) in log_kernel.axis_iter(Axis(0)).enumerate() {
        for (j, k) in row.iter().enumerate() {
            let v = k + f[i];
            if v > max[j] {
                max[j] = v;
            }
        }
    }
    let mut sum = vec![0.0; m];
    for (i, row) in log_kernel.axis_iter(Axis(0)).enumerate() {
        for (j, k) in row.iter().enumerate() {
            if max[j].is_finite() {
                sum[j] += (k + f[i] - max[j]).exp();
            }
        }
    }
    for j in 0..m {
        out[j] = if max[j].is_finite() { max[j] + sum[j].ln() } else { max[j] };
    }
}

fn row_error(log_kernel: &Array2<f64>, f: &Array1<f64>, g: &Array1<f64>, p: ArrayView1<f64>) -> f64 {
    log_kernel
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let s: f64 = row.iter().zip(g.iter()).map(|(k, gj)| (k + f[i] + gj).exp()).sum();
            (s - p[i]).abs()
        })
        .sum()
}

/// Rounds a nonnegative matrix onto the set of plans with marginals `p` and
/// `q` (row scaling down, column scaling down, then a rank-one correction).
pub fn round_to_marginals(plan: &mut Array2<f64>, p: ArrayView1<f64>, q: ArrayView1<f64>) {
    let rows = plan.sum_axis(Axis(1));
    for (i, mut row) in plan.axis_iter_mut(Axis(0)).enumerate() {
        let x = if rows[i] > p[i] { p[i] / rows[i] } else { 1.0 };
        row.mapv_inplace(|v| v * x);
    }
    let cols = plan.sum_axis(Axis(0));
    for (j, mut col) in plan.axis_iter_mut(Axis(1)).enumerate() {
        let y = if cols[j] > q[j] { q[j] / cols[j] } else { 1.0 };
        col.mapv_inplace(|v| v * y);
    }
    // both residuals are nonnegative up to rounding
    let err_r = (&p - &plan.sum_axis(Axis(1))).mapv(|v| v.max(0.0));
    let err_c = (&q - &plan.sum_axis(Axis(0))).mapv(|v| v.max(0.0));
    let norm: f64 = err_r.iter().map(|v| v.abs()).sum();
    if norm > 0.0 {
        Zip::indexed(&mut *plan).for_each(|(i, j), v| *v += err_r[i] * err_c[j] / norm);
    }
}
