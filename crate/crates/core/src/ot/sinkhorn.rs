//! Entropic transport in the log domain with epsilon scaling.
//!
//! Dual potentials `f, g` are updated by soft-min steps at a decreasing
//! sequence of regularizations ending at the requested one, each stage warm
//! started from the previous. The final plan is rounded onto the exact
//! marginals, and the returned distance is its transport cost.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::{ground_cost, plan_cost, Coupling, CostKind, DiscreteMeasure, OtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub reg: f64,
    pub max_iters: usize,
    /// Largest tolerated row-marginal violation (L1) before rounding.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            reg: 1e-2,
            max_iters: 100_000,
            tol: 1e-6,
        }
    }
}

pub fn sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: CostKind,
    reg: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(f64, Coupling)> {
    let cost = ground_cost(&mu.points, &nu.points, kind)?;
    sinkhorn_weights(&mu.weights, &nu.weights, &cost, reg, max_iters, tol)
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct State<'a> {
    cost: &'a Tensor,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl State<'_> {
    fn update_f(&mut self, reg: f64) {
        let n2 = self.g.len();
        for i in 0..self.f.len() {
            let row = self.cost.row(i);
            let lse = log_sum_exp((0..n2).map(|j| (self.g[j] - row[j]) / reg));
            self.f[i] = reg * (self.log_a[i] - lse);
        }
    }

    fn update_g(&mut self, reg: f64) {
        let n1 = self.f.len();
        for j in 0..self.g.len() {
            let lse = log_sum_exp((0..n1).map(|i| (self.f[i] - self.cost.get(i, j)) / reg));
            self.g[j] = reg * (self.log_b[j] - lse);
        }
    }

    fn plan(&self, reg: f64) -> Tensor {
        let (n1, n2) = (self.f.len(), self.g.len());
        let mut p = Tensor::zeros(&[n1, n2]);
        for i in 0..n1 {
            let row = self.cost.row(i);
            for j in 0..n2 {
                let v = ((self.f[i] + self.g[j] - row[j]) / reg).exp();
                p.set(i, j, v);
            }
        }
        p
    }

    /// L1 row-marginal violation; columns are exact right after a `g` step.
    fn violation(&self, reg: f64, a: &[f64]) -> f64 {
        let n2 = self.g.len();
        (0..self.f.len())
            .map(|i| {
                let row = self.cost.row(i);
                let s: f64 = (0..n2)
                    .map(|j| ((self.f[i] + self.g[j] - row[j]) / reg).exp())
                    .sum();
                (s - a[i]).abs()
            })
            .sum()
    }
}

/// Projects a nearly feasible plan onto the exact marginals: scale rows
/// down, then columns down, then add the rank-one correction of the
/// remaining deficits.
fn round_to_marginals(mut p: Tensor, a: &[f64], b: &[f64]) -> Tensor {
    let (n1, n2) = (a.len(), b.len());
    for i in 0..n1 {
        let s: f64 = p.row(i).iter().sum();
        if s > a[i] {
            let k = a[i] / s;
            p.row_mut(i).iter_mut().for_each(|v| *v *= k);
        }
    }
    for j in 0..n2 {
        let s: f64 = (0..n1).map(|i| p.get(i, j)).sum();
        if s > b[j] {
            let k = b[j] / s;
            for i in 0..n1 {
                p.set(i, j, p.get(i, j) * k);
            }
        }
    }
    let er: Vec<f64> = (0..n1)
        .map(|i| (a[i] - p.row(i).iter().sum::<f64>()).max(0.0))
        .collect();
    let ec: Vec<f64> = (0..n2)
        .map(|j| (b[j] - (0..n1).map(|i| p.get(i, j)).sum::<f64>()).max(0.0))
        .collect();
    let total: f64 = ec.iter().sum();
    if total > 0.0 {
        for i in 0..n1 {
            for j in 0..n2 {
                p.set(i, j, p.get(i, j) + er[i] * ec[j] / total);
            }
        }
    }
    p
}

/// Sinkhorn on explicit weights and cost. `max_iters` bounds the number of
/// `f, g` sweeps at the final regularization.
pub fn sinkhorn_weights(
    a: &[f64],
    b: &[f64],
    cost: &Tensor,
    reg: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(f64, Coupling)> {
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(OtError::BadReg(reg));
    }
    if a.is_empty() || b.is_empty() {
        return Err(OtError::Empty);
    }
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(OtError::Length(format!(
            "cost is {}x{}, weights are {} and {}",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    if !cost.is_finite() {
        return Err(OtError::NonFiniteCost);
    }
    let mut st = State {
        cost,
        log_a: a.iter().map(|w| w.ln()).collect(),
        log_b: b.iter().map(|w| w.ln()).collect(),
        f: vec![0.0; a.len()],
        g: vec![0.0; b.len()],
    };
    let max_cost = cost.data().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut stage_reg = max_cost.max(reg);
    while stage_reg > reg {
        for _ in 0..100 {
            st.update_f(stage_reg);
            st.update_g(stage_reg);
            if st.violation(stage_reg, a) <= tol.max(1e-3 * stage_reg) {
                break;
            }
        }
        stage_reg = (stage_reg * 0.5).max(reg);
    }
    let mut violation = f64::INFINITY;
    for _ in 0..max_iters {
        st.update_f(reg);
        st.update_g(reg);
        violation = st.violation(reg, a);
        if violation <= tol {
            break;
        }
    }
    if !(violation <= tol) {
        return Err(OtError::NotConverged {
            iters: max_iters,
            violation,
        });
    }
    let plan = round_to_marginals(st.plan(reg), a, b);
    let value = plan_cost(&plan, cost);
    Ok((value, Coupling { plan, cost: value }))
}
