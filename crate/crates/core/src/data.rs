//! Labeled datasets: Gaussian-blob mixtures in the unit box, targets with a
//! controlled distribution shift, a CIFAR-10 binary reader, and estimates
//! of how far a target drifted from its source.
//!
//! Labels are 0-based in memory and 1-based in CSV files.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ot::{self, CostKind, DiscreteMeasure};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_CLASS_CAP: usize = 256;
pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_DIM: usize = 3072;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("mixture: {0}")]
    Spec(String),
    #[error("class probabilities: {0}")]
    Probs(String),
    #[error("class {class} is empty in the {role} dataset")]
    EmptyClass { class: usize, role: &'static str },
    #[error("datasets disagree: {0}")]
    Mismatch(String),
    #[error("{path}: partial record at byte offset {offset}")]
    PartialRecord { path: String, offset: usize },
    #[error("{path}: label {label} out of range at byte offset {offset}")]
    BadLabel { path: String, label: u8, offset: usize },
    #[error("io: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Ot(#[from] ot::OtError),
}

pub type Result<T> = std::result::Result<T, DataError>;

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Tensor,
    pub labels: Vec<usize>,
    pub k: usize,
    pub role: Role,
}

impl LabeledDataset {
    pub fn new(points: Tensor, labels: Vec<usize>, k: usize, role: Role) -> Result<Self> {
        if labels.len() != points.rows() {
            return Err(DataError::Mismatch(format!(
                "{} labels for {} points",
                labels.len(),
                points.rows()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(DataError::Spec(format!("label {} exceeds {k} classes", l + 1)));
        }
        Ok(LabeledDataset {
            points,
            labels,
            k,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn class_rows(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.k];
        for &l in &self.labels {
            f[l] += 1.0;
        }
        let n = self.len().max(1) as f64;
        f.iter().map(|c| c / n).collect()
    }

    /// `label, x1..xd` with 1-based labels.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![(self.labels[i] + 1).to_string()];
            rec.extend(self.points.row(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, role: Role) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut labels = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DataError::Csv(format!("row {}: {e}", row + 1)))?;
            if vals.len() < 2 || *dim.get_or_insert(vals.len() - 1) != vals.len() - 1 {
                return Err(DataError::Csv(format!("row {}: wrong number of fields", row + 1)));
            }
            let label = vals[0];
            if !(label >= 1.0 && label.fract() == 0.0) {
                return Err(DataError::Csv(format!("row {}: label {label} is not a positive integer", row + 1)));
            }
            labels.push(label as usize - 1);
            data.extend_from_slice(&vals[1..]);
        }
        let dim = dim.ok_or_else(|| DataError::Csv("no rows".into()))?;
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let points = Tensor::matrix(labels.len(), dim, data).map_err(|e| DataError::Csv(e.to_string()))?;
        LabeledDataset::new(points, labels, k, role)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    /// One mean per class, each inside the unit box.
    pub class_means: Vec<Vec<f64>>,
    /// Per-coordinate standard deviation of every blob.
    pub spread: f64,
    /// Uniform when empty.
    #[serde(default)]
    pub class_probs: Vec<f64>,
    /// Exact class counts (`n * p_k` by largest remainder, in class order)
    /// instead of drawing each label.
    #[serde(default)]
    pub stratified: bool,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn probs(&self) -> Vec<f64> {
        if self.class_probs.is_empty() {
            vec![1.0 / self.k as f64; self.k]
        } else {
            self.class_probs.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.n == 0 {
            return Err(DataError::Spec("d, k and n must be positive".into()));
        }
        if self.k > self.class_means.len() {
            return Err(DataError::Spec(format!(
                "{} classes but only {} means",
                self.k,
                self.class_means.len()
            )));
        }
        for (i, m) in self.class_means.iter().take(self.k).enumerate() {
            if m.len() != self.d {
                return Err(DataError::Spec(format!("mean {} has {} coordinates, expected {}", i + 1, m.len(), self.d)));
            }
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DataError::Spec(format!("mean {} leaves the unit box", i + 1)));
            }
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(DataError::Spec(format!("spread must be positive, got {}", self.spread)));
        }
        check_probs(&self.probs(), self.k)
    }
}

fn check_probs(p: &[f64], k: usize) -> Result<()> {
    if p.len() != k {
        return Err(DataError::Probs(format!("expected {k} entries, got {}", p.len())));
    }
    if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(DataError::Probs("entries must be nonnegative".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(DataError::Probs(format!("entries sum to {s}")));
    }
    Ok(())
}

/// `n * p_k` rounded so the counts sum to `n`; leftovers go to the largest
/// fractional parts, lower class first on ties.
pub fn stratified_counts(probs: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

#[allow(clippy::too_many_arguments)]
fn sample_blobs(
    means: &[Vec<f64>],
    spread: f64,
    probs: &[f64],
    n: usize,
    stratified: bool,
    stream: &str,
    seed: u64,
    role: Role,
) -> Result<LabeledDataset> {
    let k = probs.len();
    let d = means[0].len();
    let mut r = rng::substream(seed, stream);
    let classes = WeightedIndex::new(probs).map_err(|e| DataError::Probs(e.to_string()))?;
    let noise = Normal::new(0.0, spread).map_err(|e| DataError::Spec(e.to_string()))?;
    let fixed: Vec<usize> = if stratified {
        stratified_counts(probs, n)
            .into_iter()
            .enumerate()
            .flat_map(|(c, m)| std::iter::repeat_n(c, m))
            .collect()
    } else {
        Vec::new()
    };
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = if stratified { fixed[i] } else { classes.sample(&mut r) };
        labels.push(c);
        data.extend(means[c].iter().map(|m| (m + noise.sample(&mut r)).clamp(0.0, 1.0)));
    }
    LabeledDataset::new(Tensor::matrix(n, d, data).expect("sized"), labels, k, role)
}

/// Gaussian blobs around the class means, clipped to the unit box.
pub fn gen_mixture(spec: &MixtureSpec, role: Role) -> Result<LabeledDataset> {
    spec.validate()?;
    sample_blobs(
        &spec.class_means[..spec.k],
        spec.spread,
        &spec.probs(),
        spec.n,
        spec.stratified,
        &format!("data/mixture/{}", role.name()),
        spec.seed,
        role,
    )
}

/// A target drawn like `source` but with every mean moved by `mean_shift`
/// and class probabilities changed by the additive `prob_shift` (which must
/// sum to zero; empty means no change).
pub fn gen_shifted_target(
    source: &MixtureSpec,
    mean_shift: &[f64],
    prob_shift: &[f64],
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    source.validate()?;
    if mean_shift.len() != source.d {
        return Err(DataError::Spec(format!(
            "mean shift has {} coordinates, expected {}",
            mean_shift.len(),
            source.d
        )));
    }
    let means: Vec<Vec<f64>> = source.class_means[..source.k]
        .iter()
        .map(|m| m.iter().zip(mean_shift).map(|(a, b)| a + b).collect())
        .collect();
    let shifted = MixtureSpec {
        class_means: means,
        n,
        seed,
        class_probs: if prob_shift.is_empty() {
            source.probs()
        } else {
            if prob_shift.len() != source.k {
                return Err(DataError::Probs(format!(
                    "shift has {} entries, expected {}",
                    prob_shift.len(),
                    source.k
                )));
            }
            source.probs().iter().zip(prob_shift).map(|(p, s)| p + s).collect()
        },
        ..source.clone()
    };
    shifted.validate()?;
    gen_mixture(&shifted, Role::Target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    /// Largest class-conditional Wasserstein-1 distance.
    pub eps1: f64,
    /// Largest class-frequency difference.
    pub eps2: f64,
}

/// Per-class exact transport between the first `cap` points of each class,
/// plus the largest gap between class frequencies.
pub fn estimate_shift(
    source: &LabeledDataset,
    target: &LabeledDataset,
    cap: usize,
    cost: CostKind,
) -> Result<ShiftEstimate> {
    if source.k != target.k {
        return Err(DataError::Mismatch(format!("{} vs {} classes", source.k, target.k)));
    }
    if source.dim() != target.dim() {
        return Err(DataError::Mismatch(format!("dimension {} vs {}", source.dim(), target.dim())));
    }
    let mut eps1: f64 = 0.0;
    for class in 0..source.k {
        let mut clouds = Vec::with_capacity(2);
        for ds in [source, target] {
            let rows = ds.class_rows(class);
            if rows.is_empty() {
                return Err(DataError::EmptyClass {
                    class: class + 1,
                    role: ds.role.name(),
                });
            }
            let take = &rows[..rows.len().min(cap.max(1))];
            clouds.push(DiscreteMeasure::uniform(ds.points.select_rows(take)));
        }
        let (w, _) = ot::mallows_exact(&clouds[0], &clouds[1], cost)?;
        eps1 = eps1.max(w);
    }
    let eps2 = source
        .class_frequencies()
        .iter()
        .zip(target.class_frequencies())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ShiftEstimate { eps1, eps2 })
}

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte
/// followed by the red, green and blue 32x32 planes. Pixels are scaled to
/// `[0, 1]`. Stops after `limit` records when given.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P], limit: Option<usize>) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let limit = limit.unwrap_or(usize::MAX);
    'files: for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let name = path.display().to_string();
        parse_cifar(&bytes, &name, limit, &mut labels, &mut data)?;
        if labels.len() >= limit {
            break 'files;
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(DataError::Io("no records read".into()));
    }
    LabeledDataset::new(Tensor::matrix(n, CIFAR_DIM, data).expect("sized"), labels, 10, Role::Source)
}

fn parse_cifar(bytes: &[u8], name: &str, limit: usize, labels: &mut Vec<usize>, data: &mut Vec<f64>) -> Result<()> {
    let mut offset = 0;
    while offset < bytes.len() && labels.len() < limit {
        if offset + CIFAR_RECORD > bytes.len() {
            return Err(DataError::PartialRecord {
                path: name.to_string(),
                offset,
            });
        }
        let label = bytes[offset];
        if label > 9 {
            return Err(DataError::BadLabel {
                path: name.to_string(),
                label,
                offset,
            });
        }
        labels.push(label as usize);
        data.extend(bytes[offset + 1..offset + CIFAR_RECORD].iter().map(|&b| f64::from(b) / 255.0));
        offset += CIFAR_RECORD;
    }
    Ok(())
}
