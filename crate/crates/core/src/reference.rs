//! The reference distribution: a mixture of `K'` spherical caps of radius
//! `R`, one around each signed axis `±e_i` for `i < K'`.
//!
//! A draw from part `i` is `R (c_i + eps u) / |c_i + eps u|` with `u`
//! uniform on the unit sphere, so every sample lies on the sphere of radius
//! `R` within angle `asin(eps)` of its center.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("k_prime ({k_prime}) must be between 1 and d_star ({d_star})")]
    KPrime { k_prime: usize, d_star: usize },
    #[error("radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("alphas: {0}")]
    Alphas(String),
    #[error("signs: expected {expected} entries of +1/-1")]
    Signs { expected: usize },
    #[error("sample size must be positive")]
    EmptySample,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub d_star: usize,
    pub k_prime: usize,
    pub radius: f64,
    pub epsilon: f64,
    pub alphas: Vec<f64>,
    /// `+1.0` or `-1.0` per part; fixed at construction.
    pub signs: Vec<f64>,
    pub seed: u64,
}

/// Points drawn from the reference with the (0-based) part each came from.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    pub points: Tensor,
    pub part_ids: Vec<usize>,
}

pub fn uniform_alphas(k_prime: usize) -> Vec<f64> {
    vec![1.0 / k_prime as f64; k_prime]
}

/// Builds a reference, drawing each part's sign from the `seed` stream.
/// `alphas = None` means uniform weights.
pub fn build_reference(
    d_star: usize,
    k_prime: usize,
    radius: f64,
    epsilon: f64,
    alphas: Option<Vec<f64>>,
    seed: u64,
) -> Result<ReferenceSpec, ReferenceError> {
    let alphas = alphas.unwrap_or_else(|| uniform_alphas(k_prime.max(1)));
    let mut stream = rng::substream(seed, "reference/signs");
    let signs = (0..k_prime)
        .map(|_| if stream.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let spec = ReferenceSpec {
        d_star,
        k_prime,
        radius,
        epsilon,
        alphas,
        signs,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<(), ReferenceError> {
        if self.k_prime == 0 || self.k_prime > self.d_star {
            return Err(ReferenceError::KPrime {
                k_prime: self.k_prime,
                d_star: self.d_star,
            });
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(ReferenceError::Radius(self.radius));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ReferenceError::Epsilon(self.epsilon));
        }
        if self.alphas.len() != self.k_prime {
            return Err(ReferenceError::Alphas(format!(
                "expected {} weights, got {}",
                self.k_prime,
                self.alphas.len()
            )));
        }
        if self.alphas.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(ReferenceError::Alphas("weights must be nonnegative".into()));
        }
        let total: f64 = self.alphas.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ReferenceError::Alphas(format!("weights sum to {total}, not 1")));
        }
        if self.signs.len() != self.k_prime || self.signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(ReferenceError::Signs {
                expected: self.k_prime,
            });
        }
        Ok(())
    }

    /// Center of part `i` on the sphere: `R * sign_i * e_i`.
    pub fn center(&self, i: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.d_star];
        c[i] = self.radius * self.signs[i];
        c
    }

    /// Index of the signed axis with the largest projection.
    pub fn nearest_part(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for i in 0..self.k_prime {
            let v = self.signs[i] * x[i];
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        best
    }

    /// Angle between `x` and the center of part `i`, computed with `atan2`
    /// so that tiny angles keep full precision.
    pub fn angle_to_center(&self, x: &[f64], i: usize) -> f64 {
        let along = self.signs[i] * x[i];
        let ortho: f64 = x
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt();
        ortho.atan2(along)
    }

    /// Draws one point from part `i`.
    pub fn sample_part<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vec<f64> {
        let d = self.d_star;
        let gamma: Vec<f64> = loop {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if g.iter().any(|&v| v != 0.0) {
                break g;
            }
        };
        let gn = crate::tensor::l2_norm(&gamma);
        let mut v: Vec<f64> = gamma.iter().map(|g| self.epsilon * g / gn).collect();
        v[i] += self.signs[i];
        let vn = crate::tensor::l2_norm(&v);
        v.iter().map(|x| self.radius * x / vn).collect()
    }
}

pub fn sample_reference<R: Rng + ?Sized>(
    spec: &ReferenceSpec,
    n: usize,
    rng: &mut R,
) -> Result<ReferenceSample, ReferenceError> {
    if n == 0 {
        return Err(ReferenceError::EmptySample);
    }
    spec.validate()?;
    let parts = WeightedIndex::new(&spec.alphas)
        .map_err(|e| ReferenceError::Alphas(e.to_string()))?;
    let mut data = Vec::with_capacity(n * spec.d_star);
    let mut part_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let i = parts.sample(rng);
        data.extend(spec.sample_part(i, rng));
        part_ids.push(i);
    }
    Ok(ReferenceSample {
        points: Tensor::matrix(n, spec.d_star, data).expect("sized above"),
        part_ids,
    })
}

/// Writes one row per point: `x1..xd, part_id` with 1-based part ids.
pub fn write_sample_csv<W: Write>(sample: &ReferenceSample, w: W) -> Result<(), ReferenceError> {
    let csv_err = |e: csv::Error| ReferenceError::Csv(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    let d = sample.points.cols();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("part_id".into());
    out.write_record(&header).map_err(csv_err)?;
    for (i, &p) in sample.part_ids.iter().enumerate() {
        let mut rec: Vec<String> = sample.points.row(i).iter().map(|v| v.to_string()).collect();
        rec.push((p + 1).to_string());
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(|e| ReferenceError::Csv(e.to_string()))?;
    Ok(())
}
