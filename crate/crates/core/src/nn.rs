//! Encoder, projection head and critic.
//!
//! The encoder is a ReLU MLP whose output is pushed onto the sphere of
//! radius `R` (`x -> R x / max(|x|, 1e-12)`). The optional projection head
//! (two-layer ReLU) maps that representation back to `d*` dimensions and is
//! normalized again; it is used only while training. The critic is an MLP
//! with layer normalization and LeakyReLU(0.2) after every hidden layer and
//! a scalar output.
//!
//! Parameters live in a flat [`ParamStore`] under `encoder.*`, `head.*` and
//! `critic.*`. Forward passes are recorded on a [`Tape`]; passing
//! `trainable = false` binds a group as constants so no gradient reaches it.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::tensor::{self, ParamStore, Tape, Tensor, TensorError, Var};

pub const NORM_FLOOR: f64 = 1e-12;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {got} columns, expected {expected}")]
    Dim { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub input_dim: usize,
    /// Hidden widths of the encoder; the output width is `d_star`.
    pub encoder_hidden: Vec<usize>,
    pub d_star: usize,
    /// Hidden width of the projection head; `None` disables the head.
    pub head_hidden: Option<usize>,
    /// Hidden widths of the critic, which maps `d_star -> ... -> 1`.
    pub critic_hidden: Vec<usize>,
    pub radius: f64,
}

impl StackConfig {
    /// Small shapes for CPU experiments: encoder `[d, 64, 64, d*]`, head
    /// hidden 64, critic `[d*, 128, d*, 1]`.
    pub fn desk(input_dim: usize, d_star: usize) -> Self {
        StackConfig {
            input_dim,
            encoder_hidden: vec![64, 64],
            d_star,
            head_hidden: Some(64),
            critic_hidden: vec![128, d_star],
            radius: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = std::iter::once(self.input_dim)
            .chain(self.encoder_hidden.iter().copied())
            .chain(std::iter::once(self.d_star))
            .chain(self.head_hidden)
            .chain(self.critic_hidden.iter().copied());
        for w in widths {
            if w == 0 {
                return Err(NnError::Config("layer widths must be positive".into()));
            }
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(NnError::Config(format!("radius must be positive, got {}", self.radius)));
        }
        Ok(())
    }

    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.d_star);
        w
    }

    fn critic_widths(&self) -> Vec<usize> {
        let mut w = vec![self.d_star];
        w.extend(&self.critic_hidden);
        w.push(1);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub config: StackConfig,
    pub params: ParamStore,
}

fn he_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive widths")
}

fn init_mlp<R: Rng>(params: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut R) {
    for (k, pair) in widths.windows(2).enumerate() {
        params.insert(format!("{prefix}.w{k}"), he_uniform(pair[0], pair[1], rng));
        params.insert(format!("{prefix}.b{k}"), Tensor::zeros(&[1, pair[1]]));
    }
}

impl EncoderStack {
    pub fn new(config: StackConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        init_mlp(
            &mut params,
            "encoder",
            &config.encoder_widths(),
            &mut rng::substream(seed, "nn/encoder"),
        );
        if let Some(h) = config.head_hidden {
            init_mlp(
                &mut params,
                "head",
                &[config.d_star, h, config.d_star],
                &mut rng::substream(seed, "nn/head"),
            );
        }
        let mut stack = EncoderStack { config, params };
        stack.reset_critic(seed);
        Ok(stack)
    }

    /// Re-initializes only the critic parameters.
    pub fn reset_critic(&mut self, seed: u64) {
        self.params.retain(|k, _| !k.starts_with("critic."));
        let widths = self.config.critic_widths();
        init_mlp(&mut self.params, "critic", &widths, &mut rng::substream(seed, "nn/critic"));
        for (k, &w) in widths[1..widths.len() - 1].iter().enumerate() {
            self.params
                .insert(format!("critic.ln{k}.gain"), Tensor::filled(&[1, w], 1.0));
            self.params
                .insert(format!("critic.ln{k}.bias"), Tensor::zeros(&[1, w]));
        }
    }

    /// Number of scalar parameters under `prefix` (e.g. `"encoder."`).
    pub fn count_params(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    fn bind(&self, tape: &mut Tape, name: &str, trainable: bool) -> Result<Var> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| TensorError::MissingParam(name.to_string()))?;
        Ok(if trainable {
            tape.param(name, t)?
        } else {
            tape.constant(t.clone())?
        })
    }

    fn mlp(&self, tape: &mut Tape, prefix: &str, mut x: Var, layers: usize, trainable: bool) -> Result<Var> {
        for k in 0..layers {
            let w = self.bind(tape, &format!("{prefix}.w{k}"), trainable)?;
            let b = self.bind(tape, &format!("{prefix}.b{k}"), trainable)?;
            x = tape.affine(x, w, b)?;
            if k + 1 < layers {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    fn check_cols(&self, tape: &Tape, x: Var, expected: usize) -> Result<()> {
        let got = tape.shape(x).1;
        if got != expected {
            return Err(NnError::Dim { expected, got });
        }
        Ok(())
    }

    /// Encoder (and optionally head) forward pass; rows have norm `R`.
    pub fn encode_on(&self, tape: &mut Tape, x: Var, with_head: bool, trainable: bool) -> Result<Var> {
        self.check_cols(tape, x, self.config.input_dim)?;
        let layers = self.config.encoder_hidden.len() + 1;
        let h = self.mlp(tape, "encoder", x, layers, trainable)?;
        let mut z = sphere(tape, h, self.config.radius)?;
        if with_head && self.config.head_hidden.is_some() {
            let p = self.mlp(tape, "head", z, 2, trainable)?;
            z = sphere(tape, p, self.config.radius)?;
        }
        Ok(z)
    }

    /// Critic forward pass: one scalar per row, as an `n x 1` node.
    pub fn criticize_on(&self, tape: &mut Tape, z: Var, trainable: bool) -> Result<Var> {
        self.check_cols(tape, z, self.config.d_star)?;
        let layers = self.config.critic_hidden.len() + 1;
        let mut x = z;
        for k in 0..layers {
            let w = self.bind(tape, &format!("critic.w{k}"), trainable)?;
            let b = self.bind(tape, &format!("critic.b{k}"), trainable)?;
            x = tape.affine(x, w, b)?;
            if k + 1 < layers {
                let g = self.bind(tape, &format!("critic.ln{k}.gain"), trainable)?;
                let bb = self.bind(tape, &format!("critic.ln{k}.bias"), trainable)?;
                x = tape.layer_norm(x, g, bb, LAYER_NORM_EPS)?;
                x = tape.leaky_relu(x, LEAKY_SLOPE)?;
            }
        }
        Ok(x)
    }

    pub fn encode(&self, x: &Tensor, with_head: bool) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.input("x", x.clone())?;
        let z = self.encode_on(&mut tape, xv, with_head, false)?;
        Ok(tape.value(z).clone())
    }

    pub fn criticize(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let zv = tape.input("z", z.clone())?;
        let g = self.criticize_on(&mut tape, zv, false)?;
        Ok(tape.value(g).data().to_vec())
    }

    /// Largest ratio `|f(x1) - f(x2)| / |x1 - x2|` over `pairs` random pairs
    /// built from rows of `x` and small perturbations of them. This only
    /// observes the Lipschitz constant of the encoder; nothing enforces it.
    pub fn lipschitz_probe<R: Rng>(&self, x: &Tensor, pairs: usize, rng: &mut R) -> Result<f64> {
        if x.cols() != self.config.input_dim {
            return Err(NnError::Dim {
                expected: self.config.input_dim,
                got: x.cols(),
            });
        }
        let n = x.rows();
        let d = x.cols();
        let mut a = Vec::with_capacity(pairs * d);
        let mut b = Vec::with_capacity(pairs * d);
        for p in 0..pairs {
            let i = rng.random_range(0..n);
            a.extend_from_slice(x.row(i));
            if p % 2 == 0 && n > 1 {
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                b.extend_from_slice(x.row(j));
            } else {
                b.extend(x.row(i).iter().map(|v| v + rng.random_range(-1e-3..1e-3)));
            }
        }
        let a = Tensor::matrix(pairs, d, a)?;
        let b = Tensor::matrix(pairs, d, b)?;
        let (fa, fb) = (self.encode(&a, false)?, self.encode(&b, false)?);
        let mut best: f64 = 0.0;
        for p in 0..pairs {
            let dx = tensor::l2_dist(a.row(p), b.row(p));
            if dx > 0.0 {
                best = best.max(tensor::l2_dist(fa.row(p), fb.row(p)) / dx);
            }
        }
        Ok(best)
    }

    /// Writes all parameters plus `manifest/*` entries describing the
    /// architecture.
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut store = self.params.clone();
        let c = &self.config;
        let vec_entry = |v: &[usize]| {
            let data: Vec<f64> = std::iter::once(v.len() as f64)
                .chain(v.iter().map(|&x| x as f64))
                .collect();
            Tensor::new(vec![data.len()], data).expect("nonempty")
        };
        store.insert("manifest/input_dim".into(), Tensor::new(vec![1], vec![c.input_dim as f64])?);
        store.insert("manifest/encoder_hidden".into(), vec_entry(&c.encoder_hidden));
        store.insert("manifest/d_star".into(), Tensor::new(vec![1], vec![c.d_star as f64])?);
        store.insert(
            "manifest/head_hidden".into(),
            Tensor::new(vec![1], vec![c.head_hidden.unwrap_or(0) as f64])?,
        );
        store.insert("manifest/critic_hidden".into(), vec_entry(&c.critic_hidden));
        store.insert("manifest/radius".into(), Tensor::new(vec![1], vec![c.radius])?);
        tensor::write_checkpoint(w, &store)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut store = tensor::read_checkpoint(r)?;
        let mut take = |name: &str| {
            store
                .remove(name)
                .ok_or_else(|| NnError::Manifest(format!("missing {name}")))
        };
        let scalar = |t: Tensor| t.data()[0];
        let list = |t: Tensor| -> Result<Vec<usize>> {
            let d = t.data();
            let n = d[0] as usize;
            if d.len() != n + 1 {
                return Err(NnError::Manifest("malformed width list".into()));
            }
            Ok(d[1..].iter().map(|&x| x as usize).collect())
        };
        let head = scalar(take("manifest/head_hidden")?) as usize;
        let config = StackConfig {
            input_dim: scalar(take("manifest/input_dim")?) as usize,
            encoder_hidden: list(take("manifest/encoder_hidden")?)?,
            d_star: scalar(take("manifest/d_star")?) as usize,
            head_hidden: (head > 0).then_some(head),
            critic_hidden: list(take("manifest/critic_hidden")?)?,
            radius: scalar(take("manifest/radius")?),
        };
        let template = EncoderStack::new(config.clone(), 0)?;
        if let Some(extra) = store.keys().find(|k| !template.params.contains_key(*k)) {
            return Err(NnError::Manifest(format!("unexpected parameter {extra}")));
        }
        for (name, t) in &template.params {
            let got = store
                .get(name)
                .ok_or_else(|| NnError::Manifest(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(TensorError::ParamShape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    got: got.shape().to_vec(),
                }
                .into());
            }
        }
        Ok(EncoderStack { config, params: store })
    }
}

/// `x -> R x / max(|x|, 1e-12)` row-wise.
pub fn sphere(tape: &mut Tape, x: Var, radius: f64) -> Result<Var> {
    let norm = tape.row_norm(x)?;
    let floored = tape.clamp_min(norm, NORM_FLOOR)?;
    let inv = tape.recip(floored)?;
    let s = tape.scale(inv, radius)?;
    Ok(tape.mul_col(x, s)?)
}
