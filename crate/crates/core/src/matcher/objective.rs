//! Square-loss Gromov-Wasserstein objective with a linear attribute term,
//! and its gradients with respect to the coupling and the basis weights.
//!
//! For similarity matrices `Cs`, `Cf` and a coupling `T` with row sums `r`
//! and column sums `c`:
//!
//! ```text
//! GW(T) = Σ_ijkl (Cs[i,k] - Cf[j,l])² T[i,j] T[k,l]
//!       = rᵀ (Cs∘Cs) r + cᵀ (Cf∘Cf) c - 2 <T, Cs T Cfᵀ>
//! ```
//!
//! which holds for any `T`, not only feasible ones.

use ndarray::{Array1, Array2, Axis};

pub fn combine(bases: &[Array2<f64>], weights: &[f64]) -> Array2<f64> {
    debug_assert_eq!(bases.len(), weights.len());
    let mut out = Array2::<f64>::zeros(bases[0].dim());
    for (b, w) in bases.iter().zip(weights) {
        out.scaled_add(*w, b);
    }
    out
}

fn quad(c: &Array2<f64>, v: &Array1<f64>) -> f64 {
    v.dot(&c.mapv(|x| x * x).dot(v))
}

pub fn gw_value(cs: &Array2<f64>, cf: &Array2<f64>, plan: &Array2<f64>) -> f64 {
    let r = plan.sum_axis(Axis(1));
    let c = plan.sum_axis(Axis(0));
    let cross = (plan * &cs.dot(plan).dot(&cf.t())).sum();
    quad(cs, &r) + quad(cf, &c) - 2.0 * cross
}

/// dGW/dT for symmetric `Cs`, `Cf`.
pub fn gw_gradient(cs: &Array2<f64>, cf: &Array2<f64>, plan: &Array2<f64>) -> Array2<f64> {
    let r = plan.sum_axis(Axis(1));
    let c = plan.sum_axis(Axis(0));
    let rs = cs.mapv(|x| x * x).dot(&r);
    let cfq = cf.mapv(|x| x * x).dot(&c);
    let mut grad = cs.dot(plan).dot(&cf.t());
    grad.mapv_inplace(|v| -4.0 * v);
    for ((i, j), g) in grad.indexed_iter_mut() {
        *g += 2.0 * rs[i] + 2.0 * cfq[j];
    }
    grad
}

/// Structure bases of both graphs plus the fixed linear cost.
#[derive(Debug, Clone)]
pub struct Problem {
    pub source_bases: Vec<Array2<f64>>,
    pub target_bases: Vec<Array2<f64>>,
    pub linear_cost: Array2<f64>,
}

impl Problem {
    pub fn similarity(&self, beta_s: &[f64], beta_f: &[f64]) -> (Array2<f64>, Array2<f64>) {
        (combine(&self.source_bases, beta_s), combine(&self.target_bases, beta_f))
    }

    pub fn objective(&self, beta_s: &[f64], beta_f: &[f64], plan: &Array2<f64>) -> f64 {
        let (cs, cf) = self.similarity(beta_s, beta_f);
        gw_value(&cs, &cf, plan) + (&self.linear_cost * plan).sum()
    }

    /// Gradient of the objective with respect to the source and target
    /// basis weights, with the coupling held fixed.
    pub fn beta_gradient(&self, beta_s: &[f64], beta_f: &[f64], plan: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let (cs, cf) = self.similarity(beta_s, beta_f);
        let r = plan.sum_axis(Axis(1));
        let c = plan.sum_axis(Axis(0));
        let rr = outer(&r, &r);
        let cc = outer(&c, &c);
        // T Cf Tᵀ and Tᵀ Cs T
        let tct = plan.dot(&cf).dot(&plan.t());
        let tcs = plan.t().dot(&cs).dot(plan);
        let gs = self.source_bases.iter().map(|b| 2.0 * ((&cs * b * &rr).sum() - (b * &tct).sum())).collect();
        let gf = self.target_bases.iter().map(|b| 2.0 * ((&cf * b * &cc).sum() - (b * &tcs).sum())).collect();
        (gs, gf)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    &a2 * &b2
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
