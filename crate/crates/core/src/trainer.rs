//! The training objective and the alternating optimization loop.
//!
//! The encoder (plus head) minimizes `align + lambda * W`, where `align` is
//! the mean squared distance between representations of two views of the
//! same input and `W` estimates the Wasserstein-1 distance between the
//! representation distribution and the reference. `W` comes from one of:
//!
//! - `DualGp`: a critic `g`, `W = mean g(ref) - mean g(reps)`; the critic
//!   is updated every `critic_period` steps to minimize `-W + eta * GP`
//! - `PrimalExact` / `PrimalSinkhorn`: the minibatch transport cost, with
//!   a surrogate whose gradient is `sum_j plan_ij * d cost(z_i, r_j) / d z_i`
//!
//! Every random draw comes from a named substream of the seed, keyed by
//! epoch or step, so runs are reproducible bit for bit.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentError, AugmentationSet};
use crate::nn::{EncoderStack, NnError};
use crate::ot::{self, CostKind, DiscreteMeasure, OtError};
use crate::reference::{sample_reference, ReferenceError, ReferenceSpec};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, LrSchedule, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("representation width {got} does not match the reference dimension {expected}")]
    ReferenceDim { expected: usize, got: usize },
    #[error("batch mismatch: {0}")]
    Batch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WassersteinMode {
    DualGp,
    PrimalExact,
    PrimalSinkhorn,
}

/// Which representation the Wasserstein term sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WassersteinSite {
    Head,
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub encoder_lr: f64,
    pub critic_lr: f64,
    pub encoder_weight_decay: f64,
    pub critic_weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Steps between critic updates (the encoder moves every step).
    pub critic_period: usize,
    /// Critic Adam steps per critic update.
    pub critic_steps: usize,
    pub warmup_steps: u64,
    pub wasserstein_mode: WassersteinMode,
    pub wasserstein_on: WassersteinSite,
    /// Ground cost for the primal modes.
    pub primal_cost: CostKind,
    pub sinkhorn_reg: f64,
    /// Write real elapsed seconds into the metrics; off keeps output
    /// byte-identical across runs.
    pub record_wall_time: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            eta: 1.0,
            encoder_lr: 3e-5,
            critic_lr: 1e-3,
            encoder_weight_decay: 1e-4,
            critic_weight_decay: 1e-4,
            batch_size: 512,
            epochs: 1000,
            critic_period: 5,
            critic_steps: 1,
            warmup_steps: 500,
            wasserstein_mode: WassersteinMode::DualGp,
            wasserstein_on: WassersteinSite::Head,
            primal_cost: CostKind::L2,
            sinkhorn_reg: 0.05,
            record_wall_time: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(TrainError::Config { field, reason });
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be >= 0, got {}", self.lambda));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be >= 0, got {}", self.eta));
        }
        for (field, v) in [("encoder_lr", self.encoder_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, format!("must be positive, got {v}"));
            }
        }
        for (field, v) in [
            ("encoder_weight_decay", self.encoder_weight_decay),
            ("critic_weight_decay", self.critic_weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, format!("must be >= 0, got {v}"));
            }
        }
        if self.batch_size < 2 {
            return bad("batch_size", format!("must be at least 2, got {}", self.batch_size));
        }
        if self.critic_period < 1 {
            return bad("critic_period", "must be at least 1".into());
        }
        if self.critic_steps < 1 {
            return bad("critic_steps", "must be at least 1".into());
        }
        if self.wasserstein_mode == WassersteinMode::PrimalSinkhorn && !(self.sinkhorn_reg > 0.0) {
            return bad("sinkhorn_reg", format!("must be positive, got {}", self.sinkhorn_reg));
        }
        Ok(())
    }

    fn w_head(&self) -> bool {
        self.wasserstein_on == WassersteinSite::Head
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based.
    pub epoch: usize,
    pub align_loss: f64,
    pub wasserstein_estimate: f64,
    pub gp_term: f64,
    pub total_loss: f64,
    pub wall_time_s: f64,
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], w: W) -> Result<()> {
    let err = |e: csv::Error| TrainError::Csv(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r).map_err(err)?;
    }
    if records.is_empty() {
        out.write_record(["epoch", "align_loss", "wasserstein_estimate", "gp_term", "total_loss", "wall_time_s"])
            .map_err(err)?;
    }
    out.flush().map_err(|e| TrainError::Csv(e.to_string()))
}

/// Mean over rows of `|z1_i - z2_i|^2`.
pub fn alignment_loss(tape: &mut Tape, z1: Var, z2: Var) -> Result<Var> {
    if tape.shape(z1) != tape.shape(z2) {
        return Err(TrainError::Batch(format!("views {:?} vs {:?}", tape.shape(z1), tape.shape(z2))));
    }
    let n = tape.shape(z1).0;
    let d = tape.sub(z1, z2)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum_all(sq)?;
    Ok(tape.scale(s, 1.0 / n as f64)?)
}

/// Mean over rows of `(|grad g(x_bar)| - 1)^2` with
/// `x_bar = u z_f + (1 - u) z_r`, `u ~ U[0, 1]` drawn per row.
pub fn gradient_penalty<F, R>(tape: &mut Tape, mut critic: F, z_f: &Tensor, z_r: &Tensor, rng: &mut R) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    R: Rng + ?Sized,
{
    if z_f.rows() != z_r.rows() || z_f.cols() != z_r.cols() {
        return Err(TrainError::Batch(format!(
            "representations {}x{} vs reference {}x{}",
            z_f.rows(),
            z_f.cols(),
            z_r.rows(),
            z_r.cols()
        )));
    }
    let mut bar = z_f.clone();
    for i in 0..bar.rows() {
        let u: f64 = rng.random();
        let r = z_r.row(i);
        for (b, rv) in bar.row_mut(i).iter_mut().zip(r) {
            *b = u * *b + (1.0 - u) * rv;
        }
    }
    let x = tape.input("x_bar", bar)?;
    let g = critic(tape, x)?;
    let s = tape.sum_all(g)?;
    let grad = tape.input_gradient(s, x)?;
    let norm = tape.row_norm(grad)?;
    let off = tape.add_scalar(norm, -1.0)?;
    let sq = tape.mul(off, off)?;
    Ok(tape.mean_all(sq)?)
}

/// Minibatch transport cost between `z` and `r` as a tape node whose value
/// is the cost and whose gradient is the envelope gradient for the optimal
/// (or entropic) plan.
pub fn primal_term(
    tape: &mut Tape,
    z: Var,
    r: &Tensor,
    mode: WassersteinMode,
    cost: CostKind,
    sinkhorn_reg: f64,
) -> Result<Var> {
    let zv = tape.value(z).clone();
    let mu = DiscreteMeasure::uniform(zv.clone());
    let nu = DiscreteMeasure::uniform(r.clone());
    let (w, coupling) = match mode {
        WassersteinMode::PrimalSinkhorn => ot::sinkhorn(&mu, &nu, cost, sinkhorn_reg, 10_000, 1e-6)?,
        _ => ot::mallows_exact(&mu, &nu, cost)?,
    };
    let (n, d) = (zv.rows(), zv.cols());
    let mut g = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let zi = zv.row(i).to_vec();
        for j in 0..r.rows() {
            let p = coupling.plan.get(i, j);
            if p == 0.0 {
                continue;
            }
            let rj = r.row(j);
            let gi = g.row_mut(i);
            match cost {
                CostKind::L2 => {
                    let dist = crate::tensor::l2_dist(&zi, rj);
                    if dist > 0.0 {
                        for k in 0..d {
                            gi[k] += p * (zi[k] - rj[k]) / dist;
                        }
                    }
                }
                CostKind::L1 => {
                    for k in 0..d {
                        let diff = zi[k] - rj[k];
                        if diff != 0.0 {
                            gi[k] += p * diff.signum();
                        }
                    }
                }
            }
        }
    }
    let zg = crate::tensor::dot(zv.data(), g.data());
    let gc = tape.constant(g)?;
    let prod = tape.mul(z, gc)?;
    let s = tape.sum_all(prod)?;
    Ok(tape.add_scalar(s, w - zg)?)
}

/// Loss components for one batch, evaluated without updating anything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub align: f64,
    pub wasserstein: f64,
    /// Gradient penalty; 0 in the primal modes.
    pub gp: f64,
    /// `align + lambda * wasserstein`: the encoder objective.
    pub total: f64,
    /// `-wasserstein + eta * gp`: the critic objective (dual mode only).
    pub critic_objective: f64,
}

fn check_reference(stack: &EncoderStack, reference: &ReferenceSpec) -> Result<()> {
    if reference.d_star != stack.config.d_star {
        return Err(TrainError::ReferenceDim {
            expected: reference.d_star,
            got: stack.config.d_star,
        });
    }
    Ok(())
}

/// Builds the encoder objective on `tape`; returns (total, align, w).
fn encoder_objective(
    tape: &mut Tape,
    stack: &EncoderStack,
    x1: &Tensor,
    x2: &Tensor,
    r: &Tensor,
    config: &TrainConfig,
) -> Result<(Var, Var, Var)> {
    let n = x1.rows();
    let xs = tape.input("x", concat(x1, x2)?)?;
    let z = stack.encode_on(tape, xs, true, true)?;
    let z1 = tape.slice_rows(z, 0, n)?;
    let z2 = tape.slice_rows(z, n, n)?;
    let align = alignment_loss(tape, z1, z2)?;
    let zw = if config.w_head() || stack.config.head_hidden.is_none() {
        z
    } else {
        stack.encode_on(tape, xs, false, true)?
    };
    let w = match config.wasserstein_mode {
        WassersteinMode::DualGp => {
            let g_rep = stack.criticize_on(tape, zw, false)?;
            let m_rep = tape.mean_all(g_rep)?;
            let g_ref = stack.criticize(r)?;
            let m_ref = g_ref.iter().sum::<f64>() / g_ref.len() as f64;
            let neg = tape.scale(m_rep, -1.0)?;
            tape.add_scalar(neg, m_ref)?
        }
        mode => primal_term(tape, zw, r, mode, config.primal_cost, config.sinkhorn_reg)?,
    };
    let lw = tape.scale(w, config.lambda)?;
    let total = tape.add(align, lw)?;
    Ok((total, align, w))
}

/// Builds the critic objective `-W + eta * GP` on `tape`, with the
/// representations held fixed. Returns (objective, w, gp).
fn critic_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    stack: &EncoderStack,
    z1: &Tensor,
    z2: &Tensor,
    r: &Tensor,
    eta: f64,
    rng: &mut R,
) -> Result<(Var, Var, Var)> {
    let reps = tape.input("reps", concat(z1, z2)?)?;
    let rv = tape.input("reference", r.clone())?;
    let g_rep = stack.criticize_on(tape, reps, true)?;
    let g_ref = stack.criticize_on(tape, rv, true)?;
    let m_rep = tape.mean_all(g_rep)?;
    let m_ref = tape.mean_all(g_ref)?;
    let w = tape.sub(m_ref, m_rep)?;
    let gp = gradient_penalty(tape, |t, x| Ok(stack.criticize_on(t, x, true)?), z1, r, rng)?;
    let neg = tape.scale(w, -1.0)?;
    let egp = tape.scale(gp, eta)?;
    let obj = tape.add(neg, egp)?;
    Ok((obj, w, gp))
}

fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(TrainError::Batch(format!("{} vs {} columns", a.cols(), b.cols())));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Ok(Tensor::matrix(a.rows() + b.rows(), a.cols(), data)?)
}

/// Evaluates every loss component on one batch of view pairs and an
/// equally sized reference batch.
pub fn total_loss<R: Rng + ?Sized>(
    stack: &EncoderStack,
    x1: &Tensor,
    x2: &Tensor,
    reference: &Tensor,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossParts> {
    if x1.rows() == 0 || x1.rows() != x2.rows() || x1.rows() != reference.rows() {
        return Err(TrainError::Batch(format!(
            "{} / {} view rows, {} reference rows",
            x1.rows(),
            x2.rows(),
            reference.rows()
        )));
    }
    let mut tape = Tape::new();
    let (total, align, w) = encoder_objective(&mut tape, stack, x1, x2, reference, config)?;
    let (align, w, total) = (tape.value(align).item(), tape.value(w).item(), tape.value(total).item());
    let (gp, critic_obj) = if config.wasserstein_mode == WassersteinMode::DualGp {
        let head = config.w_head();
        let (z1, z2) = (stack.encode(x1, head)?, stack.encode(x2, head)?);
        let mut t2 = Tape::new();
        let (obj, _, gp) = critic_objective(&mut t2, stack, &z1, &z2, reference, config.eta, rng)?;
        (t2.value(gp).item(), t2.value(obj).item())
    } else {
        (0.0, -w)
    };
    Ok(LossParts {
        align,
        wasserstein: w,
        gp,
        total,
        critic_objective: critic_obj,
    })
}

/// Optimizer state for one training run.
pub struct Trainer {
    pub config: TrainConfig,
    encoder_opt: Adam,
    critic_opt: Adam,
    step: u64,
}

struct StepOutcome {
    align: f64,
    w: f64,
    total: f64,
    gp: Option<f64>,
}

fn as_divergence(step: u64, e: TrainError) -> TrainError {
    match e {
        TrainError::Tensor(
            t @ (TensorError::NonFinite { .. } | TensorError::NanGradient(_)),
        ) => TrainError::Diverged {
            step,
            detail: t.to_string(),
        },
        TrainError::Nn(NnError::Tensor(
            t @ (TensorError::NonFinite { .. } | TensorError::NanGradient(_)),
        )) => TrainError::Diverged {
            step,
            detail: t.to_string(),
        },
        other => other,
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let encoder_opt = Adam::new(
            AdamConfig::new(config.encoder_lr)
                .with_weight_decay(config.encoder_weight_decay)
                .with_schedule(LrSchedule::LinearWarmup {
                    steps: config.warmup_steps,
                }),
        );
        let critic_opt = Adam::new(AdamConfig::new(config.critic_lr).with_weight_decay(config.critic_weight_decay));
        Ok(Trainer {
            config,
            encoder_opt,
            critic_opt,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One critic update on fixed representations; returns the critic
    /// objective before the update and the gradient penalty.
    pub fn critic_step(&mut self, stack: &mut EncoderStack, z1: &Tensor, z2: &Tensor, r: &Tensor, key: &str) -> Result<(f64, f64)> {
        let mut g = rng::substream(self.config.seed, &format!("trainer/gp/{key}"));
        let mut tape = Tape::new();
        let (obj, _, gp) = critic_objective(&mut tape, stack, z1, z2, r, self.config.eta, &mut g)?;
        let (obj_v, gp_v) = (tape.value(obj).item(), tape.value(gp).item());
        let grads = tape.backward(obj)?;
        self.critic_opt.step(&mut stack.params, &grads)?;
        Ok((obj_v, gp_v))
    }

    fn step_inner(
        &mut self,
        stack: &mut EncoderStack,
        x: &Tensor,
        aug: &AugmentationSet,
        reference: &ReferenceSpec,
    ) -> Result<StepOutcome> {
        let step = self.step;
        let seed = self.config.seed;
        let (x1, x2) = aug.sample_view_batch(x, &mut rng::substream(seed, &format!("trainer/views/{step}")))?;
        let r = sample_reference(reference, x.rows(), &mut rng::substream(seed, &format!("trainer/reference/{step}")))?
            .points;
        let mut gp = None;
        if self.config.wasserstein_mode == WassersteinMode::DualGp && step % self.config.critic_period as u64 == 0 {
            let head = self.config.w_head();
            let (z1, z2) = (stack.encode(&x1, head)?, stack.encode(&x2, head)?);
            let mut sum = 0.0;
            for k in 0..self.config.critic_steps {
                sum += self.critic_step(stack, &z1, &z2, &r, &format!("{step}/{k}"))?.1;
            }
            gp = Some(sum / self.config.critic_steps as f64);
        }
        let mut tape = Tape::new();
        let (total, align, w) = encoder_objective(&mut tape, stack, &x1, &x2, &r, &self.config)?;
        let out = StepOutcome {
            align: tape.value(align).item(),
            w: tape.value(w).item(),
            total: tape.value(total).item(),
            gp,
        };
        if !out.total.is_finite() {
            return Err(TrainError::Diverged {
                step,
                detail: format!("total loss is {}", out.total),
            });
        }
        let grads = tape.backward(total)?;
        self.encoder_opt.step(&mut stack.params, &grads)?;
        self.step += 1;
        Ok(out)
    }

    /// Runs `config.epochs` epochs over `source`, calling `on_epoch` after
    /// each with that epoch's averaged metrics and the current stack.
    pub fn fit<F>(
        &mut self,
        stack: &mut EncoderStack,
        source: &Tensor,
        aug: &AugmentationSet,
        reference: &ReferenceSpec,
        mut on_epoch: F,
    ) -> Result<Vec<MetricsRecord>>
    where
        F: FnMut(&MetricsRecord, &EncoderStack),
    {
        check_reference(stack, reference)?;
        let n = source.rows();
        if n < 2 {
            return Err(TrainError::Batch("need at least two source points".into()));
        }
        let b = self.config.batch_size.min(n);
        let started = Instant::now();
        let mut records = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::substream(self.config.seed, &format!("trainer/shuffle/{epoch}")));
            let (mut align, mut w, mut total, mut gp, mut gp_count, mut steps) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
            for chunk in order.chunks_exact(b) {
                let step = self.step;
                let x = source.select_rows(chunk);
                let out = self
                    .step_inner(stack, &x, aug, reference)
                    .map_err(|e| as_divergence(step, e))?;
                align += out.align;
                w += out.w;
                total += out.total;
                if let Some(g) = out.gp {
                    gp += g;
                    gp_count += 1;
                }
                steps += 1;
            }
            let s = steps as f64;
            let rec = MetricsRecord {
                epoch: epoch + 1,
                align_loss: align / s,
                wasserstein_estimate: w / s,
                gp_term: if gp_count > 0 { gp / gp_count as f64 } else { 0.0 },
                total_loss: total / s,
                wall_time_s: if self.config.record_wall_time {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            on_epoch(&rec, stack);
            records.push(rec);
        }
        Ok(records)
    }

    /// Trains only the critic for `steps` updates against a frozen encoder;
    /// returns the critic objective measured before each update.
    pub fn fit_critic(
        &mut self,
        stack: &mut EncoderStack,
        source: &Tensor,
        aug: &AugmentationSet,
        reference: &ReferenceSpec,
        steps: usize,
    ) -> Result<Vec<f64>> {
        check_reference(stack, reference)?;
        let n = source.rows();
        let b = self.config.batch_size.min(n);
        let seed = self.config.seed;
        let head = self.config.w_head();
        let mut history = Vec::with_capacity(steps);
        for s in 0..steps {
            let mut pick = rng::substream(seed, &format!("critic/batch/{s}"));
            let idx: Vec<usize> = rand::seq::index::sample(&mut pick, n, b).into_vec();
            let x = source.select_rows(&idx);
            let (x1, x2) = aug.sample_view_batch(&x, &mut rng::substream(seed, &format!("critic/views/{s}")))?;
            let r = sample_reference(reference, b, &mut rng::substream(seed, &format!("critic/reference/{s}")))?.points;
            let (z1, z2) = (stack.encode(&x1, head)?, stack.encode(&x2, head)?);
            let (obj, _) = self
                .critic_step(stack, &z1, &z2, &r, &format!("critic/{s}"))
                .map_err(|e| as_divergence(s as u64, e))?;
            history.push(obj);
        }
        Ok(history)
    }
}

/// Convenience wrapper: a fresh [`Trainer`] run over `config.epochs`.
pub fn fit<F>(
    stack: &mut EncoderStack,
    source: &Tensor,
    aug: &AugmentationSet,
    reference: &ReferenceSpec,
    config: &TrainConfig,
    on_epoch: F,
) -> Result<Vec<MetricsRecord>>
where
    F: FnMut(&MetricsRecord, &EncoderStack),
{
    Trainer::new(config.clone())?.fit(stack, source, aug, reference, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::StackConfig;
    use crate::reference::build_reference;

    fn toy_stack(d_star: usize) -> EncoderStack {
        let mut c = StackConfig::desk(2, d_star);
        c.encoder_hidden = vec![16];
        c.head_hidden = Some(8);
        c.critic_hidden = vec![16, d_star];
        EncoderStack::new(c, 1).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 2,
            encoder_lr: 1e-3,
            warmup_steps: 1,
            critic_period: 1,
            ..TrainConfig::default()
        }
    }

    fn toy_source() -> Tensor {
        let mut r = rng::substream(0, "toy");
        Tensor::matrix(64, 2, (0..128).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn alignment_examples() {
        let mut tape = Tape::new();
        let a = tape.input("a", Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let b = tape.input("b", Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap()).unwrap();
        let l = alignment_loss(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let same = alignment_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
    }

    #[test]
    fn collapsed_encoder_has_zero_alignment() {
        let mut s = toy_stack(3);
        for (k, t) in s.params.iter_mut() {
            if k.starts_with("encoder.w") {
                *t = Tensor::zeros(t.shape());
            }
        }
        s.params.insert("encoder.b1".into(), Tensor::from_rows(&[vec![1.0, 2.0, 2.0]]).unwrap());
        let x = toy_source();
        let mut tape = Tape::new();
        let xv = tape.input("x", x.clone()).unwrap();
        let z1 = s.encode_on(&mut tape, xv, true, false).unwrap();
        let x2 = tape.input("x2", x.map(|v| 1.0 - v)).unwrap();
        let z2 = s.encode_on(&mut tape, x2, true, false).unwrap();
        let l = alignment_loss(&mut tape, z1, z2).unwrap();
        assert!(tape.value(l).item() < 1e-28);
    }

    fn linear_critic(w: Vec<f64>) -> impl FnMut(&mut Tape, Var) -> Result<Var> {
        move |t: &mut Tape, x: Var| {
            let d = w.len();
            let wv = t.constant(Tensor::matrix(d, 1, w.clone()).unwrap())?;
            Ok(t.matmul(x, wv)?)
        }
    }

    #[test]
    fn penalty_examples() {
        let mut r = rng::substream(0, "gp");
        let zf = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.5, -0.3], vec![1.0, 1.0]]).unwrap();
        let zr = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let cases = [(vec![0.6, 0.8], 0.0), (vec![1.2, 1.6], 1.0), (vec![0.0, 0.0], 1.0)];
        for (w, expected) in cases {
            let mut tape = Tape::new();
            let gp = gradient_penalty(&mut tape, linear_critic(w), &zf, &zr, &mut r).unwrap();
            assert!((tape.value(gp).item() - expected).abs() < 1e-12);
        }
        let mut tape = Tape::new();
        assert!(gradient_penalty(&mut tape, linear_critic(vec![1.0, 0.0]), &zf, &zr.select_rows(&[0]), &mut r).is_err());
    }

    #[test]
    fn lambda_zero_is_pure_alignment() {
        let s = toy_stack(3);
        let x = toy_source();
        let aug = AugmentationSet::identity(2);
        let (x1, x2) = aug.sample_view_batch(&x, &mut rng::substream(0, "v")).unwrap();
        let spec = build_reference(3, 3, 1.0, 0.1, None, 0).unwrap();
        let r = sample_reference(&spec, 64, &mut rng::substream(0, "r")).unwrap().points;
        let cfg = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let parts = total_loss(&s, &x1, &x2, &r, &cfg, &mut rng::substream(0, "gp")).unwrap();
        assert_eq!(parts.total, parts.align);
        assert_eq!(parts.align, 0.0);
    }

    #[test]
    fn zero_critic_objective_is_eta() {
        let mut s = toy_stack(3);
        for (k, t) in s.params.iter_mut() {
            if k.starts_with("critic.") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let x = toy_source();
        let spec = build_reference(3, 3, 1.0, 0.1, None, 0).unwrap();
        let r = sample_reference(&spec, 64, &mut rng::substream(0, "r")).unwrap().points;
        let parts = total_loss(&s, &x, &x, &r, &TrainConfig::default(), &mut rng::substream(0, "gp")).unwrap();
        assert_eq!(parts.wasserstein, 0.0);
        assert_eq!(parts.gp, 1.0);
        assert_eq!(parts.critic_objective, 1.0);
    }

    #[test]
    fn primal_total_matches_exact_transport() {
        let s = toy_stack(3);
        let x = toy_source();
        let spec = build_reference(3, 3, 1.0, 0.1, None, 0).unwrap();
        let r = sample_reference(&spec, 64, &mut rng::substream(0, "r")).unwrap().points;
        let aug = AugmentationSet::build(
            2,
            &crate::augment::AugmentConfig {
                transforms: vec![crate::augment::TransformSpec::GaussianNoise { std: 0.05, copies: 3 }],
                image: None,
                seed: 0,
            },
        )
        .unwrap();
        let (x1, x2) = aug.sample_view_batch(&x, &mut rng::substream(0, "v")).unwrap();
        let cfg = TrainConfig {
            wasserstein_mode: WassersteinMode::PrimalExact,
            lambda: 0.7,
            ..TrainConfig::default()
        };
        let parts = total_loss(&s, &x1, &x2, &r, &cfg, &mut rng::substream(0, "gp")).unwrap();
        let z = concat(&s.encode(&x1, true).unwrap(), &s.encode(&x2, true).unwrap()).unwrap();
        let (w, _) = ot::mallows_exact(
            &DiscreteMeasure::uniform(z),
            &DiscreteMeasure::uniform(r),
            CostKind::L2,
        )
        .unwrap();
        assert!((parts.total - (parts.align + 0.7 * w)).abs() < 1e-9);
    }

    #[test]
    fn primal_surrogate_gradient_matches_finite_difference() {
        let zt = Tensor::from_rows(&[vec![0.3, 0.1], vec![-0.2, 0.5], vec![0.9, -0.4]]).unwrap();
        let r = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let w_of = |z: &Tensor| {
            ot::mallows_exact(&DiscreteMeasure::uniform(z.clone()), &DiscreteMeasure::uniform(r.clone()), CostKind::L2)
                .unwrap()
                .0
        };
        let mut tape = Tape::new();
        let z = tape.param("z", &zt).unwrap();
        let w = primal_term(&mut tape, z, &r, WassersteinMode::PrimalExact, CostKind::L2, 0.0).unwrap();
        assert!((tape.value(w).item() - w_of(&zt)).abs() < 1e-12);
        let grads = tape.backward(w).unwrap();
        let g = grads.get("z").unwrap();
        let h = 1e-6;
        for k in 0..zt.numel() {
            let mut p = zt.clone();
            p.data_mut()[k] += h;
            let mut m = zt.clone();
            m.data_mut()[k] -= h;
            let fd = (w_of(&p) - w_of(&m)) / (2.0 * h);
            assert!((fd - g.data()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_epochs_leave_stack_unchanged() {
        let mut s = toy_stack(3);
        let before = s.clone();
        let spec = build_reference(3, 3, 1.0, 0.1, None, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let recs = fit(&mut s, &toy_source(), &AugmentationSet::identity(2), &spec, &cfg, |_, _| {}).unwrap();
        assert!(recs.is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = build_reference(3, 3, 1.0, 0.1, None, 0).unwrap();
        let run = || {
            let mut s = toy_stack(3);
            let recs = fit(&mut s, &toy_source(), &AugmentationSet::identity(2), &spec, &small_config(), |_, _| {}).unwrap();
            let mut buf = Vec::new();
            write_metrics_csv(&recs, &mut buf).unwrap();
            (buf, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("epoch,align_loss,wasserstein_estimate,gp_term,total_loss,wall_time_s\n1,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn critic_objective_decreases_on_frozen_encoder() {
        let mut s = toy_stack(3);
        let spec = build_reference(3, 3, 1.0, 0.1, None, 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 64,
            critic_lr: 1e-3,
            ..TrainConfig::default()
        };
        let enc_before: Vec<Tensor> = s
            .params
            .iter()
            .filter(|(k, _)| !k.starts_with("critic."))
            .map(|(_, t)| t.clone())
            .collect();
        let hist = Trainer::new(cfg)
            .unwrap()
            .fit_critic(&mut s, &toy_source(), &AugmentationSet::identity(2), &spec, 200)
            .unwrap();
        let head: f64 = hist[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = hist[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < head, "{head} -> {tail}");
        let enc_after: Vec<Tensor> = s
            .params
            .iter()
            .filter(|(k, _)| !k.starts_with("critic."))
            .map(|(_, t)| t.clone())
            .collect();
        assert_eq!(enc_before, enc_after);
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(TrainError::Config { field, .. }) => assert_eq!(field, "batch_size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_reference_dimension() {
        let mut s = toy_stack(3);
        let spec = build_reference(4, 3, 1.0, 0.1, None, 0).unwrap();
        assert!(matches!(
            fit(&mut s, &toy_source(), &AugmentationSet::identity(2), &spec, &small_config(), |_, _| {}),
            Err(TrainError::ReferenceDim { .. })
        ));
    }
}
