//! Central finite differences against the tape, for every layer kind the
//! networks use. Each kind builds a scalar `sum(layer(x) * C)` with a fixed
//! random `C`, so the whole Jacobian is exercised.

use distmatch::nn::{self, EncoderStack, StackConfig, LAYER_NORM_EPS, LEAKY_SLOPE};
use distmatch::rng;
use distmatch::tensor::{self, ParamStore, Tape, Tensor, Var};
use rand::Rng;

pub const STEP: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-3;
pub const TOL: f64 = 1e-5;

pub const KINDS: &[&str] = &[
    "affine",
    "relu",
    "leaky_relu",
    "layer_norm",
    "sphere",
    "log_sum_exp",
    "encoder_stack",
    "critic_stack",
    "gradient_penalty",
];

type Built = tensor::Result<(Var, Vec<Var>)>;

/// One layer kind: its parameters, input and scalar-valued forward pass.
/// The forward also returns the nodes that must stay away from kinks.
pub struct Case {
    pub params: ParamStore,
    pub x: Tensor,
    pub input_grad: bool,
    stack: Option<Stack>,
    build: Box<dyn Fn(&mut Tape, &ParamStore, Var) -> Built>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stack {
    Encoder,
    Critic,
}

#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub param_err: f64,
    pub input_err: Option<f64>,
}

impl Outcome {
    pub fn worst(&self) -> f64 {
        self.param_err.max(self.input_err.unwrap_or(0.0))
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = tensor::l2_dist(a, b);
    let scale = tensor::l2_norm(a).max(tensor::l2_norm(b)).max(1e-8);
    diff / scale
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn bind(tape: &mut Tape, p: &ParamStore, name: &str) -> tensor::Result<Var> {
    tape.param(name, &p[name])
}

/// `sum(y * C)` for a fixed coefficient matrix stored as a parameter-free
/// constant.
fn contract(tape: &mut Tape, y: Var, c: &Tensor) -> tensor::Result<Var> {
    let c = tape.constant(c.clone())?;
    let prod = tape.mul(y, c)?;
    tape.sum_all(prod)
}

fn stack_config() -> StackConfig {
    StackConfig {
        input_dim: 3,
        encoder_hidden: vec![5, 4],
        d_star: 3,
        head_hidden: Some(4),
        critic_hidden: vec![5, 4],
        radius: 1.5,
    }
}

impl Case {
    pub fn new(kind: &str, seed: u64) -> Case {
        let mut r = rng::substream(seed, &format!("gradcheck/{kind}"));
        let (n, d, m) = (4, 3, 5);
        let mut params = ParamStore::new();
        let coef = random(&mut r, n, m, 1.0);
        let affine_params = |r: &mut rng::Stream, params: &mut ParamStore| {
            params.insert("w".into(), random(r, d, m, 1.0));
            params.insert("b".into(), random(r, 1, m, 0.5));
        };
        let x = random(&mut r, n, d, 1.0);
        let (build, input_grad): (Box<dyn Fn(&mut Tape, &ParamStore, Var) -> Built>, bool) = match kind {
            "affine" => {
                affine_params(&mut r, &mut params);
                (
                    Box::new(move |t, p, x| {
                        let (w, b) = (bind(t, p, "w")?, bind(t, p, "b")?);
                        let y = t.affine(x, w, b)?;
                        Ok((contract(t, y, &coef)?, vec![]))
                    }),
                    true,
                )
            }
            "relu" | "leaky_relu" => {
                affine_params(&mut r, &mut params);
                let leaky = kind == "leaky_relu";
                (
                    Box::new(move |t, p, x| {
                        let (w, b) = (bind(t, p, "w")?, bind(t, p, "b")?);
                        let pre = t.affine(x, w, b)?;
                        let y = if leaky { t.leaky_relu(pre, LEAKY_SLOPE)? } else { t.relu(pre)? };
                        Ok((contract(t, y, &coef)?, vec![pre]))
                    }),
                    true,
                )
            }
            "layer_norm" => {
                params.insert("gain".into(), random(&mut r, 1, d, 2.0));
                params.insert("bias".into(), random(&mut r, 1, d, 1.0));
                let coef = random(&mut r, n, d, 1.0);
                (
                    Box::new(move |t, p, x| {
                        let (g, b) = (bind(t, p, "gain")?, bind(t, p, "bias")?);
                        let y = t.layer_norm(x, g, b, LAYER_NORM_EPS)?;
                        Ok((contract(t, y, &coef)?, vec![]))
                    }),
                    true,
                )
            }
            "sphere" => {
                affine_params(&mut r, &mut params);
                (
                    Box::new(move |t, p, x| {
                        let (w, b) = (bind(t, p, "w")?, bind(t, p, "b")?);
                        let pre = t.affine(x, w, b)?;
                        let y = nn::sphere(t, pre, 1.5).map_err(unwrap_tensor)?;
                        Ok((contract(t, y, &coef)?, vec![]))
                    }),
                    true,
                )
            }
            "log_sum_exp" => {
                affine_params(&mut r, &mut params);
                let coef = random(&mut r, n, 1, 1.0);
                (
                    Box::new(move |t, p, x| {
                        let (w, b) = (bind(t, p, "w")?, bind(t, p, "b")?);
                        let pre = t.affine(x, w, b)?;
                        let y = t.log_sum_exp_rows(pre)?;
                        Ok((contract(t, y, &coef)?, vec![]))
                    }),
                    // no second derivative, so no input-gradient path either
                    false,
                )
            }
            "encoder_stack" | "critic_stack" | "gradient_penalty" => {
                let mut stack = EncoderStack::new(stack_config(), seed).unwrap();
                // biases start at zero; randomize them so the check covers them
                for (name, t) in stack.params.iter_mut() {
                    if name.contains(".b") || name.contains(".ln") {
                        *t = random(&mut r, 1, t.cols(), 0.5).map(|v| if name.ends_with("gain") { 1.0 + v } else { v });
                    }
                }
                // only the parameters this kind actually reads
                let used = if kind == "encoder_stack" { ["encoder.", "head."] } else { ["critic.", "critic."] };
                params = stack.params.clone();
                params.retain(|k, _| used.iter().any(|u| k.starts_with(u)));
                let config = stack.config.clone();
                let coef_z = random(&mut r, n, config.d_star, 1.0);
                let coef_g = random(&mut r, n, 1, 1.0);
                let x_in = if kind == "encoder_stack" { x.clone() } else { random(&mut r, n, config.d_star, 1.0) };
                let stack = if kind == "encoder_stack" { Stack::Encoder } else { Stack::Critic };
                let ig = kind != "gradient_penalty";
                let kind = kind.to_string();
                let build: Box<dyn Fn(&mut Tape, &ParamStore, Var) -> Built> = Box::new(move |t, p, x| {
                    let s = EncoderStack {
                        config: config.clone(),
                        params: p.clone(),
                    };
                    match kind.as_str() {
                        "encoder_stack" => {
                            let z = s.encode_on(t, x, true, true).map_err(unwrap_tensor)?;
                            Ok((contract(t, z, &coef_z)?, vec![]))
                        }
                        "critic_stack" => {
                            let g = s.criticize_on(t, x, true).map_err(unwrap_tensor)?;
                            Ok((contract(t, g, &coef_g)?, vec![]))
                        }
                        _ => {
                            // mean((|grad_z g| - 1)^2), differentiated once more
                            let g = s.criticize_on(t, x, true).map_err(unwrap_tensor)?;
                            let total = t.sum_all(g)?;
                            let dz = t.input_gradient(total, x)?;
                            let norm = t.row_norm(dz)?;
                            let dev = t.add_scalar(norm, -1.0)?;
                            let sq = t.mul(dev, dev)?;
                            Ok((t.mean_all(sq)?, vec![]))
                        }
                    }
                });
                return Case {
                    params,
                    x: x_in,
                    input_grad: ig,
                    stack: Some(stack),
                    build,
                };
            }
            other => panic!("unknown layer kind {other}"),
        };
        Case {
            params,
            x,
            input_grad,
            stack: None,
            build,
        }
    }

    fn value(&self, params: &ParamStore, x: &Tensor) -> f64 {
        let mut t = Tape::new();
        let xv = t.input("x", x.clone()).unwrap();
        let (out, _) = (self.build)(&mut t, params, xv).unwrap();
        t.value(out).item()
    }

    /// Smallest |pre-activation| over the stacks' piecewise-linear units,
    /// recomputed by a plain forward pass.
    fn stack_margin(&self) -> f64 {
        match self.stack {
            Some(Stack::Encoder) => plain_mlp_margin(&self.params, "encoder", &self.x, 3, false)
                .min(plain_head_margin(&self.params, &self.x)),
            Some(Stack::Critic) => plain_mlp_margin(&self.params, "critic", &self.x, 3, true),
            None => f64::INFINITY,
        }
    }

    /// Compares tape gradients with central differences. `None` when the
    /// configuration sits within the kink margin.
    pub fn check(&self) -> Option<Outcome> {
        if self.stack_margin() < KINK_MARGIN {
            return None;
        }
        let mut t = Tape::new();
        let xv = t.input("x", self.x.clone()).unwrap();
        let (out, kinks) = (self.build)(&mut t, &self.params, xv).unwrap();
        for k in kinks {
            if t.value(k).data().iter().any(|v| v.abs() < KINK_MARGIN) {
                return None;
            }
        }
        let ig = if self.input_grad {
            let g = t.input_gradient(out, xv).unwrap();
            Some(t.value(g).data().to_vec())
        } else {
            None
        };
        let grads = t.backward(out).unwrap();

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (name, p) in &self.params {
            let g = grads.get(name).expect("every parameter receives a gradient");
            for i in 0..p.numel() {
                let mut plus = self.params.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += STEP;
                let mut minus = self.params.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= STEP;
                numeric.push((self.value(&plus, &self.x) - self.value(&minus, &self.x)) / (2.0 * STEP));
                analytic.push(g.data()[i]);
            }
        }
        let param_err = rel_err(&analytic, &numeric);
        let input_err = ig.map(|ig| {
            let fd: Vec<f64> = (0..self.x.numel())
                .map(|i| {
                    let mut plus = self.x.clone();
                    plus.data_mut()[i] += STEP;
                    let mut minus = self.x.clone();
                    minus.data_mut()[i] -= STEP;
                    (self.value(&self.params, &plus) - self.value(&self.params, &minus)) / (2.0 * STEP)
                })
                .collect();
            rel_err(&ig, &fd)
        });
        Some(Outcome { param_err, input_err })
    }
}

fn unwrap_tensor(e: nn::NnError) -> tensor::TensorError {
    match e {
        nn::NnError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

/// Plain forward through `prefix.w{k}, prefix.b{k}` returning the smallest
/// |pre-activation| feeding a piecewise-linear unit.
fn plain_mlp_margin(p: &ParamStore, prefix: &str, x: &Tensor, layers: usize, critic: bool) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for k in 0..layers {
        let w = &p[&format!("{prefix}.w{k}")];
        let b = &p[&format!("{prefix}.b{k}")];
        let mut a = h.matmul(w).unwrap();
        for i in 0..a.rows() {
            for (v, bj) in a.row_mut(i).iter_mut().zip(b.data()) {
                *v += bj;
            }
        }
        if k + 1 == layers {
            h = a;
            break;
        }
        if critic {
            let g = &p[&format!("{prefix}.ln{k}.gain")];
            let bb = &p[&format!("{prefix}.ln{k}.bias")];
            for i in 0..a.rows() {
                let row = a.row_mut(i);
                let m = row.len() as f64;
                let mean = row.iter().sum::<f64>() / m;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
                let sd = (var + LAYER_NORM_EPS).sqrt();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean) / sd * g.data()[j] + bb.data()[j];
                }
            }
        }
        margin = margin.min(a.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        h = a.map(|v| if v > 0.0 { v } else if critic { LEAKY_SLOPE * v } else { 0.0 });
    }
    let _ = h;
    margin
}

fn plain_head_margin(p: &ParamStore, x: &Tensor) -> f64 {
    // encoder output on the sphere, then the head's single hidden layer
    let mut h = x.clone();
    for k in 0..3 {
        let mut a = h.matmul(&p[&format!("encoder.w{k}")]).unwrap();
        let b = &p[&format!("encoder.b{k}")];
        for i in 0..a.rows() {
            for (v, bj) in a.row_mut(i).iter_mut().zip(b.data()) {
                *v += bj;
            }
        }
        h = if k < 2 { a.map(|v| v.max(0.0)) } else { a };
    }
    for i in 0..h.rows() {
        let n = tensor::l2_norm(h.row(i));
        for v in h.row_mut(i) {
            *v *= 1.5 / n;
        }
    }
    plain_mlp_margin(p, "head", &h, 2, false)
}
