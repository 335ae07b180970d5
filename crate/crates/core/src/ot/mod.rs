//! Wasserstein-1 (Mallows) distance between discrete measures.
//!
//! - [`mallows_exact`]: exact transport via network simplex, with an
//!   assignment (Hungarian) fast path for uniform measures of equal size
//! - [`sinkhorn`]: log-domain entropic approximation, rounded to a feasible plan
//! - [`dual_estimate`]: the critic-based estimate used during training
//! - [`assign_labels`] / [`class_mass_matrix`]: matching latent classes to
//!   reference parts through a transport plan

mod hungarian;
mod labels;
mod simplex;
mod sinkhorn;

pub use hungarian::{assignment_cost, hungarian};
pub use labels::{assign_labels, class_mass_matrix};
pub use simplex::{transport_simplex, MAX_ARCS};
pub use sinkhorn::{sinkhorn, sinkhorn_weights, SinkhornConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("point dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("problem size {n1} x {n2} exceeds the exact solver budget of {max} arcs; use sinkhorn instead")]
    Budget { n1: usize, n2: usize, max: usize },
    #[error("sinkhorn did not converge in {iters} iterations (marginal violation {violation:e})")]
    NotConverged { iters: usize, violation: f64 },
    #[error("regularization must be positive and finite, got {0}")]
    BadReg(f64),
    #[error("empty input")]
    Empty,
    #[error("matrix must be square, got {rows} x {cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("mass matrix has a negative or non-finite entry at ({0}, {1})")]
    NegativeMass(usize, usize),
    #[error("{what}[{index}] = {label} is out of range for {k} classes")]
    LabelOutOfRange {
        what: &'static str,
        index: usize,
        label: usize,
        k: usize,
    },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("cost matrix contains a non-finite entry")]
    NonFiniteCost,
    #[error("network simplex: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, OtError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    L1,
    #[default]
    L2,
}

impl CostKind {
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            CostKind::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            CostKind::L2 => crate::tensor::l2_dist(a, b),
        }
    }
}

impl std::str::FromStr for CostKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l1" | "L1" => Ok(CostKind::L1),
            "l2" | "L2" => Ok(CostKind::L2),
            _ => Err(format!("unknown cost `{s}` (expected l1 or l2)")),
        }
    }
}

/// Points with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Tensor,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        if points.rows() != weights.len() {
            return Err(OtError::Length(format!(
                "{} points but {} weights",
                points.rows(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(OtError::InvalidMeasure(format!("weight {i} is {}", weights[i])));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OtError::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn uniform(points: Tensor) -> Self {
        let n = points.rows();
        DiscreteMeasure {
            points,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Rescales arbitrary nonnegative weights to sum to one.
    pub fn normalized(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(OtError::InvalidMeasure(format!("weights sum to {total}")));
        }
        let mut w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        // absorb rounding residue into the heaviest atom
        let residue = 1.0 - w.iter().sum::<f64>();
        if let Some(k) = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])) {
            w[k] += residue;
        }
        DiscreteMeasure::new(points, w)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-15)
    }
}

/// A transport plan together with its cost under the ground cost used to
/// compute it.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Tensor,
    pub cost: f64,
}

impl Coupling {
    /// Largest absolute deviation of the plan's marginals from `a` and `b`.
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let (n1, n2) = (self.plan.rows(), self.plan.cols());
        let mut worst: f64 = 0.0;
        let mut cols = vec![0.0; n2];
        for i in 0..n1 {
            let row = self.plan.row(i);
            worst = worst.max((row.iter().sum::<f64>() - a[i]).abs());
            for (c, v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        cols.iter()
            .zip(b)
            .fold(worst, |w, (c, bj)| w.max((c - bj).abs()))
    }
}

/// `C[i][j] = |a_i - b_j|` in the chosen norm.
pub fn ground_cost(a: &Tensor, b: &Tensor, kind: CostKind) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(OtError::DimMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let (n1, n2) = (a.rows(), b.rows());
    let mut data = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        let ai = a.row(i);
        for j in 0..n2 {
            data.push(kind.dist(ai, b.row(j)));
        }
    }
    Ok(Tensor::matrix(n1, n2, data).expect("nonempty by construction"))
}

/// Exact Wasserstein-1 distance and an optimal coupling.
pub fn mallows_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: CostKind) -> Result<(f64, Coupling)> {
    let cost = ground_cost(&mu.points, &nu.points, kind)?;
    if mu.len() == nu.len() && mu.is_uniform() && nu.is_uniform() {
        return mallows_assignment_with_cost(&cost);
    }
    let (value, plan) = transport_simplex(&mu.weights, &nu.weights, &cost)?;
    Ok((value, Coupling { plan, cost: value }))
}

/// The same quantity through the network simplex only, for any weights.
pub fn mallows_simplex(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: CostKind) -> Result<(f64, Coupling)> {
    let cost = ground_cost(&mu.points, &nu.points, kind)?;
    let (value, plan) = transport_simplex(&mu.weights, &nu.weights, &cost)?;
    Ok((value, Coupling { plan, cost: value }))
}

/// Uniform measures of equal size: an optimal plan is a permutation / n.
pub fn mallows_assignment(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: CostKind) -> Result<(f64, Coupling)> {
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return Err(OtError::InvalidMeasure(
            "assignment solver needs uniform measures of equal size".into(),
        ));
    }
    mallows_assignment_with_cost(&ground_cost(&mu.points, &nu.points, kind)?)
}

fn mallows_assignment_with_cost(cost: &Tensor) -> Result<(f64, Coupling)> {
    let n = cost.rows();
    if n * n > MAX_ARCS {
        return Err(OtError::Budget {
            n1: n,
            n2: n,
            max: MAX_ARCS,
        });
    }
    let perm = hungarian(cost)?;
    let w = 1.0 / n as f64;
    let mut plan = Tensor::zeros(&[n, n]);
    for (i, &j) in perm.iter().enumerate() {
        plan.set(i, j, w);
    }
    let value = plan_cost(&plan, cost);
    Ok((value, Coupling { plan, cost: value }))
}

pub(crate) fn plan_cost(plan: &Tensor, cost: &Tensor) -> f64 {
    plan.data().iter().zip(cost.data()).map(|(p, c)| p * c).sum()
}

/// Critic-based estimate: mean of `g` over reference samples minus the mean
/// over representations (both views pooled, i.e. the average of the two
/// per-view means when the views have equal size).
pub fn dual_estimate(on_reference: &[f64], on_representations: &[f64]) -> Result<f64> {
    if on_reference.is_empty() || on_representations.is_empty() {
        return Err(OtError::Empty);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(on_reference) - mean(on_representations))
}
