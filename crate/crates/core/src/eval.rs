//! Transfer evaluation and the diagnostics behind the transfer guarantee.
//!
//! Probes act on encoder outputs with the projection head removed. Classes
//! are 0-based here; files written by the runner use 1-based labels.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{estimate_sigma_delta, AugmentError, AugmentationSet};
use crate::data::LabeledDataset;
use crate::nn::{EncoderStack, NnError};
use crate::rng;
use crate::tensor::{self, Adam, AdamConfig, LrSchedule, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error("psi formula domain: gamma_min = {0} exceeds 1")]
    GammaDomain(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Centroid,
    Trained,
}

/// Linear classifier `argmax_k (W z)_k`; `w` is K x d.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub w: Tensor,
    pub kind: ProbeKind,
}

impl ProbeModel {
    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    /// Argmax of the scores; ties go to the lowest class.
    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        if z.len() != self.w.cols() {
            return Err(EvalError::Dim(format!("probe expects {}, got {}", self.w.cols(), z.len())));
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.w.rows() {
            let s = tensor::dot(self.w.row(k), z);
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        Ok(best)
    }

    pub fn predict_all(&self, z: &Tensor) -> Result<Vec<usize>> {
        (0..z.rows()).map(|i| self.predict(z.row(i))).collect()
    }
}

fn check_labels(labels: &[usize], rows: usize, k: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(EvalError::Dim(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(EvalError::Arg(format!("label {} out of range for {k} classes", l + 1)));
    }
    Ok(())
}

/// Per-class mean of both views' representations.
pub fn centroids(z1: &Tensor, z2: &Tensor, labels: &[usize], k: usize) -> Result<Tensor> {
    if z1.rows() != z2.rows() || z1.cols() != z2.cols() {
        return Err(EvalError::Dim(format!(
            "views {}x{} vs {}x{}",
            z1.rows(),
            z1.cols(),
            z2.rows(),
            z2.cols()
        )));
    }
    check_labels(labels, z1.rows(), k)?;
    let d = z1.cols();
    let mut w = Tensor::zeros(&[k, d]);
    let mut counts = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        let row = w.row_mut(y);
        for c in 0..d {
            row[c] += z1.get(i, c) + z2.get(i, c);
        }
    }
    for (class, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(EvalError::EmptyClass { class: class + 1 });
        }
        w.row_mut(class).iter_mut().for_each(|v| *v /= 2.0 * n as f64);
    }
    Ok(w)
}

/// Nearest-centroid probe from labeled view pairs, encoded without the head.
pub fn fit_centroid_probe(
    stack: &EncoderStack,
    x1: &Tensor,
    x2: &Tensor,
    labels: &[usize],
    k: usize,
) -> Result<ProbeModel> {
    let w = centroids(&stack.encode(x1, false)?, &stack.encode(x2, false)?, labels, k)?;
    Ok(ProbeModel {
        w,
        kind: ProbeKind::Centroid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub final_lr: f64,
    pub weight_decay: f64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        ProbeTrainConfig {
            epochs: 500,
            lr: 1e-2,
            final_lr: 1e-6,
            weight_decay: 5e-6,
        }
    }
}

/// Softmax cross-entropy probe on fixed representations `z`, trained full
/// batch by Adam with an exponentially decaying learning rate from a zero
/// initialization, so the result depends only on the data.
pub fn fit_trained_probe(z: &Tensor, labels: &[usize], k: usize, config: &ProbeTrainConfig) -> Result<ProbeModel> {
    check_labels(labels, z.rows(), k)?;
    if z.rows() == 0 {
        return Err(EvalError::Empty("training set"));
    }
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&y| counts[y] += 1);
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(EvalError::EmptyClass { class: c + 1 });
    }
    if !(config.lr > 0.0 && config.final_lr > 0.0 && config.weight_decay >= 0.0) {
        return Err(EvalError::Arg("probe learning rates must be positive".into()));
    }
    let (n, d) = (z.rows(), z.cols());
    let mut params = tensor::ParamStore::new();
    params.insert("probe.w".into(), Tensor::zeros(&[k, d]));
    let mut onehot = Tensor::zeros(&[n, k]);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let mut opt = Adam::new(
        AdamConfig::new(config.lr)
            .with_weight_decay(config.weight_decay)
            .with_schedule(LrSchedule::ExponentialDecay {
                final_lr: config.final_lr,
                total_steps: config.epochs as u64,
            }),
    );
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let x = tape.input("z", z.clone())?;
        let w = tape.param("probe.w", &params["probe.w"])?;
        let wt = tape.transpose(w)?;
        let s = tape.matmul(x, wt)?;
        let lse = tape.log_sum_exp_rows(s)?;
        let y = tape.constant(onehot.clone())?;
        let picked = tape.mul(s, y)?;
        let a = tape.sum_all(lse)?;
        let b = tape.sum_all(picked)?;
        let diff = tape.sub(a, b)?;
        let loss = tape.scale(diff, 1.0 / n as f64)?;
        let grads = tape.backward(loss)?;
        opt.step(&mut params, &grads)?;
    }
    Ok(ProbeModel {
        w: params.remove("probe.w").expect("probe weight present"),
        kind: ProbeKind::Trained,
    })
}

/// Majority vote among the `k` nearest training representations. Distance
/// ties go to the lower training index; vote ties to the lowest class.
pub fn knn_predict(train: &Tensor, labels: &[usize], classes: usize, query: &[f64], k: usize) -> Result<usize> {
    if train.rows() == 0 {
        return Err(EvalError::Empty("k-NN training set"));
    }
    check_labels(labels, train.rows(), classes)?;
    if k == 0 || k > train.rows() {
        return Err(EvalError::Arg(format!("k = {k} with {} training points", train.rows())));
    }
    if query.len() != train.cols() {
        return Err(EvalError::Dim(format!("query {} vs train {}", query.len(), train.cols())));
    }
    let mut order: Vec<(f64, usize)> = (0..train.rows())
        .map(|i| (tensor::l2_dist(train.row(i), query), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; classes];
    for &(_, i) in &order[..k] {
        votes[labels[i]] += 1;
    }
    let top = *votes.iter().max().expect("at least one class");
    Ok(votes.iter().position(|&v| v == top).expect("max present"))
}

pub fn knn_predict_all(train: &Tensor, labels: &[usize], classes: usize, queries: &Tensor, k: usize) -> Result<Vec<usize>> {
    (0..queries.rows())
        .map(|i| knn_predict(train, labels, classes, queries.row(i), k))
        .collect()
}

/// Fraction of predictions that differ from the truth.
pub fn err_rate(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    if predicted.len() != truth.len() {
        return Err(EvalError::Dim(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub gram: Vec<Vec<f64>>,
    pub max_offdiag_abs: f64,
}

/// Inner products between the rows of `w`.
pub fn gram_of(w: &Tensor) -> GramReport {
    let k = w.rows();
    let mut gram = vec![vec![0.0; k]; k];
    let mut max_off: f64 = 0.0;
    for i in 0..k {
        for j in i..k {
            let v = tensor::dot(w.row(i), w.row(j));
            gram[i][j] = v;
            gram[j][i] = v;
            if i != j {
                max_off = max_off.max(v.abs());
            }
        }
    }
    GramReport {
        gram,
        max_offdiag_abs: max_off,
    }
}

/// One view pair per labeled point, drawn from the substream `name`.
pub fn labeled_views(aug: &AugmentationSet, data: &LabeledDataset, seed: u64, name: &str) -> Result<(Tensor, Tensor)> {
    Ok(aug.sample_view_batch(&data.points, &mut rng::substream(seed, name))?)
}

/// Centroid Gram matrix of the target over one draw of augmented views.
pub fn gram_diagnostic(stack: &EncoderStack, aug: &AugmentationSet, target: &LabeledDataset, seed: u64) -> Result<GramReport> {
    let (x1, x2) = labeled_views(aug, target, seed, "eval/views")?;
    let probe = fit_centroid_probe(stack, &x1, &x2, &target.labels, target.k)?;
    Ok(gram_of(&probe.w))
}

/// For each `eps`, the fraction of points whose largest representation
/// distance over all pairs of augmented views exceeds `eps`.
pub fn u_t_estimate(stack: &EncoderStack, points: &Tensor, aug: &AugmentationSet, eps_grid: &[f64]) -> Result<Vec<f64>> {
    if points.rows() == 0 {
        return Err(EvalError::Empty("target set"));
    }
    let m = aug.len();
    let mut all = Vec::with_capacity(points.rows() * m * points.cols());
    for i in 0..points.rows() {
        for v in aug.views(points.row(i)) {
            all.extend(v);
        }
    }
    let z = stack.encode(&Tensor::matrix(points.rows() * m, points.cols(), all)?, false)?;
    let spreads: Vec<f64> = (0..points.rows())
        .map(|i| {
            let mut best: f64 = 0.0;
            for a in 0..m {
                for b in a + 1..m {
                    best = best.max(tensor::l2_dist(z.row(i * m + a), z.row(i * m + b)));
                }
            }
            best
        })
        .collect();
    let n = spreads.len() as f64;
    Ok(eps_grid
        .iter()
        .map(|&e| spreads.iter().filter(|&&s| s > e).count() as f64 / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiInputs {
    pub sigma: f64,
    pub delta: f64,
    pub eps: f64,
    pub radius: f64,
    pub lipschitz: f64,
    pub u_t: f64,
    pub min_p: f64,
    pub min_centroid_normsq: f64,
    pub max_centroid_err: f64,
}

/// `(gamma_min, psi)` for equal source and target radii:
///
/// ```text
/// gamma = (2 sigma - 1) - U / p_min - (sigma - U / p_min) (L delta / R + 2 eps / R)
/// psi   = gamma - sqrt(2 - 2 gamma) - (1 - min |mu_hat|^2 / R) / 2 - 2 max |mu_hat - mu| / R
/// ```
///
/// The squared centroid norm is divided by `R`, not `R^2`, exactly as the
/// expression is usually stated; the two agree at `R = 1`.
pub fn psi_threshold(p: &PsiInputs) -> Result<(f64, f64)> {
    if !(p.min_p > 0.0) {
        return Err(EvalError::Arg(format!("min_p must be positive, got {}", p.min_p)));
    }
    if !(p.radius > 0.0) {
        return Err(EvalError::Arg(format!("radius must be positive, got {}", p.radius)));
    }
    let r = p.radius;
    let u = p.u_t / p.min_p;
    let gamma = (2.0 * p.sigma - 1.0) - u - (p.sigma - u) * (p.lipschitz * p.delta / r + 2.0 * p.eps / r);
    if gamma > 1.0 || gamma.is_nan() {
        return Err(EvalError::GammaDomain(gamma));
    }
    let psi = gamma - (2.0 - 2.0 * gamma).sqrt() - 0.5 * (1.0 - p.min_centroid_normsq / r) - 2.0 * p.max_centroid_err / r;
    Ok((gamma, psi))
}

/// The sufficient condition for the centroid probe: every off-diagonal
/// centroid product below `R^2 psi`.
pub fn sufficient_condition(max_offdiag_abs: f64, radius: f64, psi: f64) -> bool {
    max_offdiag_abs < radius * radius * psi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagConfig {
    pub eps_grid: Vec<f64>,
    /// Main-part fraction used for delta and psi.
    pub sigma: f64,
    /// Which entry of `eps_grid` feeds psi.
    pub psi_eps_index: usize,
    pub lipschitz_pairs: usize,
    /// Largest per-class sample fed to the sigma/delta search.
    pub sigma_delta_cap: usize,
    pub seed: u64,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            eps_grid: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            sigma: 0.9,
            psi_eps_index: 1,
            lipschitz_pairs: 256,
            sigma_delta_cap: 200,
            seed: 0,
        }
    }
}

impl DiagConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(("eps_grid", "must be a nonempty list of finite non-negative values".into()));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(("sigma", format!("must lie in (0, 1], got {}", self.sigma)));
        }
        if self.psi_eps_index >= self.eps_grid.len() {
            return Err(("psi_eps_index", format!("{} is past the end of eps_grid", self.psi_eps_index)));
        }
        if self.lipschitz_pairs == 0 {
            return Err(("lipschitz_pairs", "must be positive".into()));
        }
        if self.sigma_delta_cap < 2 {
            return Err(("sigma_delta_cap", "must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub gram: Vec<Vec<f64>>,
    pub max_offdiag_abs: f64,
    pub eps_grid: Vec<f64>,
    pub u_t: Vec<f64>,
    pub sigma: f64,
    pub delta: f64,
    pub lipschitz: f64,
    pub min_p: f64,
    pub min_centroid_normsq: f64,
    pub max_centroid_err: f64,
    /// `None` when the inputs fall outside the formula's domain.
    pub gamma_min: Option<f64>,
    pub psi: Option<f64>,
    pub sufficient_condition: bool,
    /// Measured nearest-centroid error on the clean target points.
    pub err_estimate: f64,
    /// `(1 - sigma) + U_T(eps)` at the psi epsilon.
    pub err_bound: f64,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| EvalError::Json(e.to_string()))
    }
}

/// All diagnostics for a frozen stack on a labeled target set. The centroid
/// error term compares centroids of two disjoint halves of each class.
pub fn diagnose(
    stack: &EncoderStack,
    aug: &AugmentationSet,
    target: &LabeledDataset,
    config: &DiagConfig,
) -> Result<DiagnosticsReport> {
    config.validate().map_err(|(f, m)| EvalError::Arg(format!("{f}: {m}")))?;
    let k = target.k;
    let radius = stack.config.radius;
    let (x1, x2) = labeled_views(aug, target, config.seed, "eval/views")?;
    let (z1, z2) = (stack.encode(&x1, false)?, stack.encode(&x2, false)?);
    let w = centroids(&z1, &z2, &target.labels, k)?;
    let gram = gram_of(&w);

    let (mut half_a, mut half_b) = (Vec::new(), Vec::new());
    for class in 0..k {
        for (pos, i) in target.class_rows(class).into_iter().enumerate() {
            if pos % 2 == 0 {
                half_a.push(i);
            } else {
                half_b.push(i);
            }
        }
    }
    let half = |rows: &[usize]| -> Result<Tensor> {
        let labels: Vec<usize> = rows.iter().map(|&i| target.labels[i]).collect();
        centroids(&z1.select_rows(rows), &z2.select_rows(rows), &labels, k)
    };
    let max_centroid_err = match (half(&half_a), half(&half_b)) {
        (Ok(a), Ok(b)) => (0..k).map(|c| tensor::l2_dist(a.row(c), b.row(c))).fold(0.0, f64::max),
        // a class with a single point: no held-out copy to compare against
        _ => 0.0,
    };
    let min_centroid_normsq = (0..k).map(|c| tensor::dot(w.row(c), w.row(c))).fold(f64::INFINITY, f64::min);
    let min_p = target.class_frequencies().into_iter().fold(f64::INFINITY, f64::min);

    let mut capped = Vec::new();
    for class in 0..k {
        capped.extend(target.class_rows(class).into_iter().take(config.sigma_delta_cap));
    }
    let sd_labels: Vec<usize> = capped.iter().map(|&i| target.labels[i]).collect();
    let sd = estimate_sigma_delta(aug, &target.points.select_rows(&capped), &sd_labels, k, &[config.sigma])?;
    let delta = sd.entries.iter().map(|e| e.delta).fold(0.0, f64::max);

    let lipschitz = stack.lipschitz_probe(
        &target.points,
        config.lipschitz_pairs,
        &mut rng::substream(config.seed, "eval/lipschitz"),
    )?;
    let u_t = u_t_estimate(stack, &target.points, aug, &config.eps_grid)?;
    let eps = config.eps_grid[config.psi_eps_index];
    let u_eps = u_t[config.psi_eps_index];
    let inputs = PsiInputs {
        sigma: config.sigma,
        delta,
        eps,
        radius,
        lipschitz,
        u_t: u_eps,
        min_p,
        min_centroid_normsq,
        max_centroid_err,
    };
    let (gamma_min, psi) = match psi_threshold(&inputs) {
        Ok((g, p)) => (Some(g), Some(p)),
        Err(EvalError::GammaDomain(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let probe = ProbeModel {
        w,
        kind: ProbeKind::Centroid,
    };
    let clean = stack.encode(&target.points, false)?;
    let err_estimate = err_rate(&probe.predict_all(&clean)?, &target.labels)?;
    Ok(DiagnosticsReport {
        sufficient_condition: psi.is_some_and(|p| sufficient_condition(gram.max_offdiag_abs, radius, p)),
        gram: gram.gram,
        max_offdiag_abs: gram.max_offdiag_abs,
        eps_grid: config.eps_grid.clone(),
        u_t,
        sigma: config.sigma,
        delta,
        lipschitz,
        min_p,
        min_centroid_normsq,
        max_centroid_err,
        gamma_min,
        psi,
        err_estimate,
        err_bound: (1.0 - config.sigma) + u_eps,
    })
}

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub dataset: String,
    pub linear: f64,
    pub knn: f64,
}

pub fn write_accuracy_csv<W: Write>(rows: &[AccuracyRow], w: W) -> Result<()> {
    let err = |e: csv::Error| EvalError::Csv(e.to_string());
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["method", "dataset", "linear", "knn"]).map_err(err)?;
    for r in rows {
        out.serialize(r).map_err(err)?;
    }
    out.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or the lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let (x, y) = (ra[i] - ma, rb[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
