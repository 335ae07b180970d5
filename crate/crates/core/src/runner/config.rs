//! Run configuration: one JSON document covering every stage.
//!
//! Component `seed` fields are not read from the file; every stage receives
//! the single top-level `seed` and draws from its own named substreams.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, AugmentationSet, TransformSpec};
use crate::data::MixtureSpec;
use crate::eval::{DiagConfig, ProbeTrainConfig};
use crate::nn::StackConfig;
use crate::reference::ReferenceSpec;
use crate::trainer::{TrainConfig, WassersteinMode};

use super::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Where artifacts go unless overridden on the command line.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSection,
    pub augment: AugmentConfig,
    pub reference: ReferenceSection,
    pub network: StackConfig,
    pub trainer: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Synthetic source mixture and a shifted labeled target.
    Mixture {
        source: MixtureSpec,
        target: TargetSection,
    },
    /// CIFAR-10 binary batches: unlabeled pretraining on `train`, probes fit
    /// on the first `probe_train` labeled training records and scored on
    /// `test`.
    Cifar10 {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
        probe_train: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Added to every source class mean.
    pub mean_shift: Vec<f64>,
    /// Added to the source class probabilities; empty for none.
    #[serde(default)]
    pub prob_shift: Vec<f64>,
    /// Labeled points the probes are fit on (exact class counts).
    pub n_labeled: usize,
    /// Fresh points the probes are scored on.
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub k_prime: usize,
    pub epsilon: f64,
    /// Part weights; uniform when absent.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearProbe {
    Centroid,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Which probe fills the `linear` column of the accuracy table.
    pub probe: LinearProbe,
    pub knn_k: usize,
    pub probe_train: ProbeTrainConfig,
    pub diag: DiagConfig,
    /// Record the centroid Gram off-diagonal after every epoch.
    pub track_gram: bool,
    /// Extra checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Name used in the accuracy table.
    pub dataset_name: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            probe: LinearProbe::Centroid,
            knn_k: 5,
            probe_train: ProbeTrainConfig::default(),
            diag: DiagConfig::default(),
            track_gram: false,
            checkpoint_every: 0,
            dataset_name: "toy".into(),
        }
    }
}

fn invalid(path: impl Into<String>, reason: impl ToString) -> RunError {
    RunError::Invalid {
        path: path.into(),
        reason: reason.to_string(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| invalid("<document>", e))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The config with every component seed set from the global one; this
    /// is what gets written as the resolved copy.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        let s = c.seed;
        if let DataSection::Mixture { source, .. } = &mut c.data {
            source.seed = s;
        }
        c.augment.seed = s;
        c.trainer.seed = s;
        c.eval.diag.seed = s;
        c
    }

    fn input_dim(&self) -> usize {
        match &self.data {
            DataSection::Mixture { source, .. } => source.d,
            DataSection::Cifar10 { .. } => crate::data::CIFAR_DIM,
        }
    }

    pub fn classes(&self) -> usize {
        match &self.data {
            DataSection::Mixture { source, .. } => source.k,
            DataSection::Cifar10 { .. } => 10,
        }
    }

    pub fn reference_spec(&self) -> Result<ReferenceSpec, RunError> {
        crate::reference::build_reference(
            self.network.d_star,
            self.reference.k_prime,
            self.network.radius,
            self.reference.epsilon,
            self.reference.alphas.clone(),
            self.seed,
        )
        .map_err(|e| invalid(reference_path(&e), e))
    }

    /// Checks every section before any compute; the error names the first
    /// offending field.
    pub fn validate(&self) -> Result<(), RunError> {
        match &self.data {
            DataSection::Mixture { source, target } => {
                source.validate().map_err(|e| invalid("data.source", e))?;
                if target.mean_shift.len() != source.d {
                    return Err(invalid(
                        "data.target.mean_shift",
                        format!("has {} entries, expected {}", target.mean_shift.len(), source.d),
                    ));
                }
                if !target.prob_shift.is_empty() && target.prob_shift.len() != source.k {
                    return Err(invalid(
                        "data.target.prob_shift",
                        format!("has {} entries, expected {}", target.prob_shift.len(), source.k),
                    ));
                }
                if target.n_labeled < source.k {
                    return Err(invalid("data.target.n_labeled", "needs at least one point per class"));
                }
                if target.n_test == 0 {
                    return Err(invalid("data.target.n_test", "must be positive"));
                }
            }
            DataSection::Cifar10 {
                train,
                test,
                probe_train,
                ..
            } => {
                if train.is_empty() {
                    return Err(invalid("data.train", "no batch files listed"));
                }
                if test.is_empty() {
                    return Err(invalid("data.test", "no batch files listed"));
                }
                if *probe_train < 10 {
                    return Err(invalid("data.probe_train", "needs at least one record per class"));
                }
            }
        }
        AugmentationSet::build(self.input_dim(), &self.augment).map_err(|e| invalid("augment", e))?;
        self.network.validate().map_err(|e| invalid("network", e))?;
        if self.network.input_dim != self.input_dim() {
            return Err(invalid(
                "network.input_dim",
                format!("is {}, data has {} features", self.network.input_dim, self.input_dim()),
            ));
        }
        self.reference_spec()?;
        self.trainer.validate().map_err(|e| match e {
            crate::trainer::TrainError::Config { field, reason } => invalid(format!("trainer.{field}"), reason),
            other => invalid("trainer", other),
        })?;
        if self.eval.knn_k == 0 {
            return Err(invalid("eval.knn_k", "must be positive"));
        }
        self.eval
            .diag
            .validate()
            .map_err(|(field, reason)| invalid(format!("eval.diag.{field}"), reason))?;
        let p = &self.eval.probe_train;
        if !(p.lr > 0.0 && p.final_lr > 0.0) {
            return Err(invalid("eval.probe_train.lr", "learning rates must be positive"));
        }
        if !(p.weight_decay >= 0.0) {
            return Err(invalid("eval.probe_train.weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    /// The synthetic setting used throughout the examples and tests: four
    /// Gaussian blobs at the corners of the unit square, a target shifted
    /// by 0.02 per coordinate, and `d* = K' = K = 4`.
    pub fn toy(seed: u64) -> RunConfig {
        let k = 4;
        RunConfig {
            seed,
            output_dir: None,
            data: DataSection::Mixture {
                source: MixtureSpec {
                    d: 2,
                    k,
                    n: 1024,
                    class_means: vec![vec![0.2, 0.2], vec![0.8, 0.2], vec![0.2, 0.8], vec![0.8, 0.8]],
                    spread: 0.05,
                    class_probs: vec![],
                    stratified: false,
                    seed,
                },
                target: TargetSection {
                    mean_shift: vec![0.02, 0.02],
                    prob_shift: vec![],
                    n_labeled: 40,
                    n_test: 1000,
                },
            },
            augment: AugmentConfig {
                transforms: vec![TransformSpec::GaussianNoise { std: 0.03, copies: 4 }],
                image: None,
                seed,
            },
            reference: ReferenceSection {
                k_prime: k,
                epsilon: 1e-3,
                alphas: None,
            },
            network: StackConfig {
                input_dim: 2,
                encoder_hidden: vec![64, 64],
                d_star: k,
                // diagnostics read the encoder output, so the toy trains
                // without a projection head
                head_hidden: None,
                critic_hidden: vec![32, k],
                radius: 1.0,
            },
            trainer: TrainConfig {
                batch_size: 256,
                epochs: 200,
                encoder_lr: 1e-3,
                critic_lr: 1e-3,
                critic_period: 1,
                critic_steps: 10,
                warmup_steps: 50,
                wasserstein_mode: WassersteinMode::DualGp,
                seed,
                ..TrainConfig::default()
            },
            eval: EvalSection {
                diag: DiagConfig {
                    seed,
                    ..DiagConfig::default()
                },
                ..EvalSection::default()
            },
        }
    }

    /// Eight blobs on a circle, for sweeping the number of reference parts.
    /// `reference.k_prime` and `network.d_star` start at 8.
    pub fn toy_octagon(seed: u64) -> RunConfig {
        let k = 8;
        let mut c = RunConfig::toy(seed);
        if let DataSection::Mixture { source, target } = &mut c.data {
            source.k = k;
            source.class_means = (0..k)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / k as f64;
                    vec![0.5 + 0.35 * a.cos(), 0.5 + 0.35 * a.sin()]
                })
                .collect();
            source.spread = 0.03;
            target.n_labeled = 80;
        }
        c.reference.k_prime = k;
        c.network.d_star = k;
        c.network.critic_hidden = vec![32, k];
        c
    }
}

fn reference_path(e: &crate::reference::ReferenceError) -> &'static str {
    use crate::reference::ReferenceError::*;
    match e {
        KPrime { .. } => "reference.k_prime",
        Radius(_) => "network.radius",
        Epsilon(_) => "reference.epsilon",
        Alphas(_) => "reference.alphas",
        _ => "reference",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_validates_and_round_trips() {
        let c = RunConfig::toy(3);
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.resolved(), c);
    }

    #[test]
    fn k_prime_above_d_star_names_the_field() {
        let mut c = RunConfig::toy(0);
        c.reference.k_prime = 9;
        match c.validate() {
            Err(RunError::Invalid { path, .. }) => assert_eq!(path, "reference.k_prime"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_field_paths() {
        let mut c = RunConfig::toy(0);
        c.trainer.critic_period = 0;
        assert!(matches!(c.validate(), Err(RunError::Invalid { path, .. }) if path == "trainer.critic_period"));
        let mut c = RunConfig::toy(0);
        c.network.input_dim = 3;
        assert!(matches!(c.validate(), Err(RunError::Invalid { path, .. }) if path == "network.input_dim"));
        let mut c = RunConfig::toy(0);
        c.eval.diag.sigma = 0.0;
        assert!(matches!(c.validate(), Err(RunError::Invalid { path, .. }) if path == "eval.diag.sigma"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::toy(0).to_json()).unwrap();
        v["trainer"]["lamda"] = serde_json::json!(1.0);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn resolved_copy_takes_the_global_seed() {
        let mut c = RunConfig::toy(0);
        c.seed = 11;
        let r = c.resolved();
        assert_eq!(r.trainer.seed, 11);
        assert_eq!(r.augment.seed, 11);
        assert_eq!(r.eval.diag.seed, 11);
    }
}
