use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp from `base/steps` at step 0 up to `base` at `steps - 1`.
    LinearWarmup { steps: u64 },
    /// Geometric interpolation from `base` at step 0 to `final_lr` at
    /// `total_steps - 1`, held constant afterwards.
    ExponentialDecay { final_lr: f64, total_steps: u64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::LinearWarmup { steps } => {
                if steps == 0 {
                    base
                } else {
                    base * ((step + 1) as f64 / steps as f64).min(1.0)
                }
            }
            LrSchedule::ExponentialDecay {
                final_lr,
                total_steps,
            } => {
                if total_steps <= 1 {
                    return base;
                }
                let frac = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
                base * (final_lr / base).powf(frac)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr_at(self.config.lr, self.step)
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(TensorError::NanGradient(name.clone()));
            }
            let p = params
                .get(name)
                .ok_or_else(|| TensorError::MissingParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(TensorError::ParamShape {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        let lr = self.current_lr();
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let pd = p.data_mut();
            for (((pi, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * *pi);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name.into(), Tensor::scalar(v));
        s
    }

    fn grads(name: &str, v: f64) -> Gradients {
        let mut g = Gradients::default();
        g.grads.insert(name.into(), Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = store("w", 1.25);
        let mut adam = Adam::new(AdamConfig::new(0.1));
        adam.step(&mut p, &grads("w", 0.0)).unwrap();
        assert_eq!(p["w"].item(), 1.25);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_on_square() {
        // grad of w^2 at 1 is 2; m_hat = 2, v_hat = 4, step = 0.1 * 2 / (2 + 1e-8)
        let mut p = store("w", 1.0);
        let mut adam = Adam::new(AdamConfig::new(0.1));
        adam.step(&mut p, &grads("w", 2.0)).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p["w"].item() - expected).abs() < 1e-15);
        assert!((p["w"].item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn warmup_starts_at_base_over_steps() {
        let s = LrSchedule::LinearWarmup { steps: 500 };
        assert_eq!(s.lr_at(3e-5, 0), 3e-5 / 500.0);
        assert_eq!(s.lr_at(3e-5, 499), 3e-5);
        assert_eq!(s.lr_at(3e-5, 10_000), 3e-5);
    }

    #[test]
    fn exponential_decay_endpoints() {
        let s = LrSchedule::ExponentialDecay {
            final_lr: 1e-6,
            total_steps: 500,
        };
        assert_eq!(s.lr_at(1e-2, 0), 1e-2);
        assert!((s.lr_at(1e-2, 499) - 1e-6).abs() < 1e-18);
        let mid = s.lr_at(1e-2, 249);
        assert!(mid < 1e-2 && mid > 1e-6);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = store("enc.w0", 1.0);
        let mut adam = Adam::new(AdamConfig::new(0.1));
        let err = adam.step(&mut p, &grads("enc.w0", f64::NAN)).unwrap_err();
        assert_eq!(err, TensorError::NanGradient("enc.w0".into()));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_without_gradient() {
        let mut p = store("w", 2.0);
        let mut adam = Adam::new(AdamConfig::new(0.1).with_weight_decay(0.5));
        adam.step(&mut p, &grads("w", 0.0)).unwrap();
        assert!((p["w"].item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
