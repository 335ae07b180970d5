//! Finite augmentation sets.
//!
//! Every transform's randomness (noise vector, scale factors, mask, crop
//! window) is drawn once when the set is built, so a set of `M` transforms
//! is a fixed finite family of maps and the augmentation distance
//! `d_A(x1, x2) = min_{s,t} |A_s(x1) - A_t(x2)|` can be computed exactly.
//! The first transform is always the identity.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::tensor::{l2_dist, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("invalid transform parameters: {0}")]
    Params(String),
    #[error("{0} needs an image shape")]
    NeedsImage(&'static str),
    #[error("input has {got} values, expected {expected}")]
    Dim { expected: usize, got: usize },
    #[error("labels: {0}")]
    Labels(String),
    #[error("sigma must lie in (0, 1], got {0}")]
    Sigma(f64),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// What to build; `copies` independent frozen instances of each entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    GaussianNoise { std: f64, copies: usize },
    CoordinateScale { low: f64, high: f64, copies: usize },
    CoordinateMask { p: f64, copies: usize },
    CropResize { min_area: f64, max_area: f64, copies: usize },
    HorizontalFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub transforms: Vec<TransformSpec>,
    /// `[channels, height, width]` for plane-major image vectors.
    #[serde(default)]
    pub image: Option<[usize; 3]>,
    #[serde(default)]
    pub seed: u64,
}

/// A frozen map.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity,
    AddNoise(Vec<f64>),
    Scale(Vec<f64>),
    Mask(Vec<bool>),
    /// Crop window in pixel coordinates, resized back to full size.
    CropResize {
        top: f64,
        left: f64,
        height: f64,
        width: f64,
    },
    Flip,
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::AddNoise(_) => "gaussian_noise",
            Transform::Scale(_) => "coordinate_scale",
            Transform::Mask(_) => "coordinate_mask",
            Transform::CropResize { .. } => "crop_resize",
            Transform::Flip => "horizontal_flip",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSet {
    dim: usize,
    image: Option<[usize; 3]>,
    transforms: Vec<Transform>,
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

impl AugmentationSet {
    pub fn identity(dim: usize) -> Self {
        AugmentationSet {
            dim,
            image: None,
            transforms: vec![Transform::Identity],
        }
    }

    /// Identity followed by the configured transforms in order.
    pub fn build(dim: usize, config: &AugmentConfig) -> Result<Self> {
        if let Some([c, h, w]) = config.image {
            if c * h * w != dim {
                return Err(AugmentError::Params(format!(
                    "image shape {c}x{h}x{w} does not match dimension {dim}"
                )));
            }
        }
        let mut r = rng::substream(config.seed, "augment/build");
        let mut transforms = vec![Transform::Identity];
        for spec in &config.transforms {
            match *spec {
                TransformSpec::GaussianNoise { std, copies } => {
                    let normal = Normal::new(0.0, std)
                        .map_err(|_| AugmentError::Params(format!("noise std {std}")))?;
                    for _ in 0..copies {
                        transforms.push(Transform::AddNoise(
                            (0..dim).map(|_| normal.sample(&mut r)).collect(),
                        ));
                    }
                }
                TransformSpec::CoordinateScale { low, high, copies } => {
                    if !(0.0 <= low && low <= high && high.is_finite()) {
                        return Err(AugmentError::Params(format!("scale range [{low}, {high}]")));
                    }
                    for _ in 0..copies {
                        transforms.push(Transform::Scale(
                            (0..dim).map(|_| r.random_range(low..=high)).collect(),
                        ));
                    }
                }
                TransformSpec::CoordinateMask { p, copies } => {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(AugmentError::Params(format!("mask probability {p}")));
                    }
                    for _ in 0..copies {
                        transforms.push(Transform::Mask((0..dim).map(|_| r.random_bool(p)).collect()));
                    }
                }
                TransformSpec::CropResize {
                    min_area,
                    max_area,
                    copies,
                } => {
                    let [_, h, w] = config.image.ok_or(AugmentError::NeedsImage("crop_resize"))?;
                    if !(0.0 < min_area && min_area <= max_area && max_area <= 1.0) {
                        return Err(AugmentError::Params(format!(
                            "crop area range [{min_area}, {max_area}]"
                        )));
                    }
                    for _ in 0..copies {
                        let side = r.random_range(min_area..=max_area).sqrt();
                        // window spans `height` pixels measured center to center
                        let height = (side * h as f64).max(1.0);
                        let width = (side * w as f64).max(1.0);
                        let top = r.random_range(0.0..=(h as f64 - height));
                        let left = r.random_range(0.0..=(w as f64 - width));
                        transforms.push(Transform::CropResize {
                            top,
                            left,
                            height,
                            width,
                        });
                    }
                }
                TransformSpec::HorizontalFlip => {
                    config.image.ok_or(AugmentError::NeedsImage("horizontal_flip"))?;
                    transforms.push(Transform::Flip);
                }
            }
        }
        Ok(AugmentationSet {
            dim,
            image: config.image,
            transforms,
        })
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn apply(&self, index: usize, x: &[f64]) -> Vec<f64> {
        match &self.transforms[index] {
            Transform::Identity => x.to_vec(),
            Transform::AddNoise(n) => x.iter().zip(n).map(|(a, b)| clip01(a + b)).collect(),
            Transform::Scale(s) => x.iter().zip(s).map(|(a, b)| clip01(a * b)).collect(),
            Transform::Mask(m) => x
                .iter()
                .zip(m)
                .map(|(&a, &off)| if off { 0.0 } else { a })
                .collect(),
            &Transform::CropResize {
                top,
                left,
                height,
                width,
            } => {
                let [c, h, w] = self.image.expect("checked at build");
                let mut out = vec![0.0; x.len()];
                let step = |span: f64, n: usize| if n > 1 { (span - 1.0) / (n - 1) as f64 } else { 0.0 };
                let (sy, sx) = (step(height, h), step(width, w));
                for ch in 0..c {
                    let plane = &x[ch * h * w..(ch + 1) * h * w];
                    for i in 0..h {
                        let y = top + i as f64 * sy;
                        for j in 0..w {
                            let xx = left + j as f64 * sx;
                            out[ch * h * w + i * w + j] = bilinear(plane, h, w, y, xx);
                        }
                    }
                }
                out
            }
            Transform::Flip => {
                let [c, h, w] = self.image.expect("checked at build");
                let mut out = vec![0.0; x.len()];
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            out[ch * h * w + i * w + j] = x[ch * h * w + i * w + (w - 1 - j)];
                        }
                    }
                }
                out
            }
        }
    }

    /// All `M` views of `x`.
    pub fn views(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.len()).map(|s| self.apply(s, x)).collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(AugmentError::Dim {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Two independent uniform draws of a transform applied to `x`.
    pub fn sample_views<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(x)?;
        let s = rng.random_range(0..self.len());
        let t = rng.random_range(0..self.len());
        Ok((self.apply(s, x), self.apply(t, x)))
    }

    /// Row-wise [`sample_views`](Self::sample_views) over a batch.
    pub fn sample_view_batch<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
        let (n, d) = (x.rows(), x.cols());
        let mut a = Vec::with_capacity(n * d);
        let mut b = Vec::with_capacity(n * d);
        for i in 0..n {
            let (v1, v2) = self.sample_views(x.row(i), rng)?;
            a.extend(v1);
            b.extend(v2);
        }
        Ok((
            Tensor::matrix(n, d, a).expect("sized"),
            Tensor::matrix(n, d, b).expect("sized"),
        ))
    }

    /// `min_{s,t} |A_s(x1) - A_t(x2)|_2` over all `M^2` view pairs.
    pub fn d_a(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        self.check(x1)?;
        self.check(x2)?;
        Ok(min_view_distance(&self.views(x1), &self.views(x2)))
    }

    /// Largest `|A(x1) - A(x2)| / |x1 - x2|` per transform over `pairs`
    /// random row pairs of `x`.
    pub fn lipschitz_probe<R: Rng + ?Sized>(&self, x: &Tensor, pairs: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check(x.row(0))?;
        let n = x.rows();
        let mut q = vec![0.0f64; self.len()];
        if n < 2 {
            return Ok(q);
        }
        for _ in 0..pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let dx = l2_dist(x.row(i), x.row(j));
            if dx == 0.0 {
                continue;
            }
            for (s, qs) in q.iter_mut().enumerate() {
                let r = l2_dist(&self.apply(s, x.row(i)), &self.apply(s, x.row(j))) / dx;
                *qs = qs.max(r);
            }
        }
        Ok(q)
    }
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |i: usize, j: usize| plane[i * w + j];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

fn min_view_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for u in a {
        for v in b {
            best = best.min(l2_dist(u, v));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDeltaEntry {
    /// 0-based class index.
    pub class: usize,
    pub sigma: f64,
    pub delta: f64,
    pub kept_count: usize,
    /// Set when the class has fewer than two points (delta reported as 0).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDeltaReport {
    pub entries: Vec<SigmaDeltaEntry>,
    /// Main-part membership over the whole dataset, one mask per entry.
    pub masks: Vec<Vec<bool>>,
}

impl SigmaDeltaReport {
    pub fn delta(&self, class: usize, sigma: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.sigma == sigma)
            .map(|e| e.delta)
    }

    /// `class, sigma, delta, kept_count` with 1-based classes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| AugmentError::Csv(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["class", "sigma", "delta", "kept_count"]).map_err(err)?;
        for e in &self.entries {
            out.write_record([
                (e.class + 1).to_string(),
                e.sigma.to_string(),
                e.delta.to_string(),
                e.kept_count.to_string(),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| AugmentError::Csv(e.to_string()))
    }
}

/// Pairwise `d_A` matrix for the listed rows.
pub fn d_a_matrix(aug: &AugmentationSet, points: &Tensor, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    let views: Vec<Vec<Vec<f64>>> = rows
        .iter()
        .map(|&i| {
            aug.check(points.row(i))?;
            Ok(aug.views(points.row(i)))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = min_view_distance(&views[i], &views[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Removal order for greedy trimming: repeatedly drop the point whose
/// largest `d_A` to any remaining point is largest. Both ends of the
/// farthest pair always tie on that score, so ties go to the point with the
/// larger total `d_A` to the rest (then the lowest index).
fn trimming_order(d: &[Vec<f64>]) -> Vec<usize> {
    let n = d.len();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 1..n {
        let mut worst = usize::MAX;
        let mut worst_val = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in (0..n).filter(|&i| alive[i]) {
            let partners = (0..n).filter(|&j| alive[j] && j != i).map(|j| d[i][j]);
            let score = (partners.clone().fold(0.0, f64::max), partners.sum::<f64>());
            if score > worst_val {
                worst_val = score;
                worst = i;
            }
        }
        alive[worst] = false;
        order.push(worst);
    }
    order
}

fn diameter(d: &[Vec<f64>], keep: &[usize]) -> f64 {
    let mut m: f64 = 0.0;
    for (a, &i) in keep.iter().enumerate() {
        for &j in &keep[a + 1..] {
            m = m.max(d[i][j]);
        }
    }
    m
}

/// For each class and each `sigma`, keeps `ceil(sigma * n_k)` points of the
/// class by greedy trimming and reports the largest `d_A` among them. The
/// kept sets are nested across `sigma`, so `delta` never increases as
/// `sigma` decreases. The result upper-bounds the best achievable `delta`.
pub fn estimate_sigma_delta(
    aug: &AugmentationSet,
    points: &Tensor,
    labels: &[usize],
    k: usize,
    sigma_grid: &[f64],
) -> Result<SigmaDeltaReport> {
    if labels.len() != points.rows() {
        return Err(AugmentError::Labels(format!(
            "{} labels for {} points",
            labels.len(),
            points.rows()
        )));
    }
    if let Some(&s) = sigma_grid.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(AugmentError::Sigma(s));
    }
    let mut entries = Vec::new();
    let mut masks = Vec::new();
    for class in 0..k {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.is_empty() {
            return Err(AugmentError::Labels(format!("class {} is empty", class + 1)));
        }
        let d = d_a_matrix(aug, points, &rows)?;
        let order = trimming_order(&d);
        let n = rows.len();
        for &sigma in sigma_grid {
            let keep_count = ((sigma * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
            let removed: Vec<usize> = order[..n - keep_count].to_vec();
            let keep: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
            let mut mask = vec![false; labels.len()];
            for &i in &keep {
                mask[rows[i]] = true;
            }
            entries.push(SigmaDeltaEntry {
                class,
                sigma,
                delta: diameter(&d, &keep),
                kept_count: keep_count,
                degenerate: n < 2,
            });
            masks.push(mask);
        }
    }
    Ok(SigmaDeltaReport { entries, masks })
}
