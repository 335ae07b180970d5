//! The pipeline: data -> augmentations -> reference -> training -> probes
//! -> diagnostics, plus artifact writing around it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::augment::AugmentationSet;
use crate::data::{self, LabeledDataset, MixtureSpec, Role};
use crate::eval::{self, AccuracyRow, DiagnosticsReport};
use crate::nn::EncoderStack;
use crate::rng;
use crate::trainer::{self, MetricsRecord};

use super::config::{DataSection, LinearProbe, RunConfig};
use super::RunError;

pub const ARTIFACT_METRICS: &str = "metrics.csv";
pub const ARTIFACT_DIAGNOSTICS: &str = "diagnostics.json";
pub const ARTIFACT_CHECKPOINT: &str = "checkpoint.dmck";
pub const ARTIFACT_CONFIG: &str = "resolved_config.json";
pub const ARTIFACT_ACCURACY: &str = "accuracy.csv";
pub const ARTIFACT_TREND: &str = "trend.csv";
/// Version stamped into diagnostics.json.
pub const SCHEMA_VERSION: u32 = 1;

/// Pretraining inputs plus the labeled sets the probes use.
#[derive(Debug, Clone)]
pub struct Datasets {
    /// Unlabeled for training purposes; labels are kept only for reporting.
    pub source: LabeledDataset,
    pub probe_train: LabeledDataset,
    pub probe_test: LabeledDataset,
}

pub fn load_datasets(config: &RunConfig) -> Result<Datasets, RunError> {
    match &config.data {
        DataSection::Mixture { source, target } => {
            let spec = MixtureSpec {
                seed: config.seed,
                ..source.clone()
            };
            let src = data::gen_mixture(&spec, Role::Source)?;
            let labeled_spec = MixtureSpec {
                stratified: true,
                ..spec.clone()
            };
            let probe_train = data::gen_shifted_target(
                &labeled_spec,
                &target.mean_shift,
                &target.prob_shift,
                target.n_labeled,
                config.seed,
            )?;
            let test_seed: u64 = rng::substream(config.seed, "run/target-test").random();
            let probe_test =
                data::gen_shifted_target(&spec, &target.mean_shift, &target.prob_shift, target.n_test, test_seed)?;
            Ok(Datasets {
                source: src,
                probe_train,
                probe_test,
            })
        }
        DataSection::Cifar10 {
            train,
            test,
            train_limit,
            test_limit,
            probe_train,
        } => {
            let source = data::load_cifar10(train, *train_limit)?;
            let n = (*probe_train).min(source.len());
            let rows: Vec<usize> = (0..n).collect();
            let probe_train = LabeledDataset::new(
                source.points.select_rows(&rows),
                source.labels[..n].to_vec(),
                source.k,
                Role::Target,
            )?;
            let mut probe_test = data::load_cifar10(test, *test_limit)?;
            probe_test.role = Role::Target;
            Ok(Datasets {
                source,
                probe_train,
                probe_test,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRecord>,
    /// `(epoch, max_offdiag_abs)` when gram tracking is on.
    pub trend: Vec<(usize, f64)>,
    pub diagnostics: DiagnosticsReport,
    pub accuracy: AccuracyRow,
    pub centroid_accuracy: f64,
    pub trained_accuracy: Option<f64>,
    pub knn_accuracy: f64,
    pub stack: EncoderStack,
}

#[derive(Serialize)]
struct Versioned<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a DiagnosticsReport,
}

fn diagnostics_json(report: &DiagnosticsReport) -> String {
    let mut s = serde_json::to_string_pretty(&Versioned {
        schema_version: SCHEMA_VERSION,
        report,
    })
    .expect("report serializes");
    s.push('\n');
    s
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(dir.join(name), bytes).map_err(|e| RunError::Io(format!("{}: {e}", dir.join(name).display())))
}

fn write_checkpoint(stack: &EncoderStack, path: &Path) -> Result<(), RunError> {
    let f = File::create(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    stack.save(&mut w)?;
    w.flush()?;
    Ok(())
}

fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, RunError> {
    Ok(1.0 - eval::err_rate(pred, truth)?)
}

/// Probes and diagnostics for a trained (or loaded) stack.
fn evaluate(
    config: &RunConfig,
    stack: &EncoderStack,
    aug: &AugmentationSet,
    ds: &Datasets,
) -> Result<(DiagnosticsReport, AccuracyRow, f64, Option<f64>, f64), RunError> {
    let k = ds.probe_train.k;
    let (x1, x2) = eval::labeled_views(aug, &ds.probe_train, config.seed, "eval/views")?;
    let centroid = eval::fit_centroid_probe(stack, &x1, &x2, &ds.probe_train.labels, k)?;
    let z_train = stack.encode(&ds.probe_train.points, false)?;
    let z_test = stack.encode(&ds.probe_test.points, false)?;
    let centroid_acc = accuracy(&centroid.predict_all(&z_test)?, &ds.probe_test.labels)?;
    let trained_acc = match config.eval.probe {
        LinearProbe::Trained => {
            let p = eval::fit_trained_probe(&z_train, &ds.probe_train.labels, k, &config.eval.probe_train)?;
            Some(accuracy(&p.predict_all(&z_test)?, &ds.probe_test.labels)?)
        }
        LinearProbe::Centroid => None,
    };
    let knn_k = config.eval.knn_k.min(z_train.rows());
    let knn_acc = accuracy(
        &eval::knn_predict_all(&z_train, &ds.probe_train.labels, k, &z_test, knn_k)?,
        &ds.probe_test.labels,
    )?;
    let diag = eval::diagnose(stack, aug, &ds.probe_train, &config.eval.diag)?;
    let row = AccuracyRow {
        method: "dm".into(),
        dataset: config.eval.dataset_name.clone(),
        linear: trained_acc.unwrap_or(centroid_acc),
        knn: knn_acc,
    };
    Ok((diag, row, centroid_acc, trained_acc, knn_acc))
}

/// Runs the whole pipeline in memory. With `out`, also writes the periodic
/// checkpoints requested by the config into that directory.
pub fn run_pipeline(config: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    let config = config.resolved();
    config.validate()?;
    let ds = load_datasets(&config)?;
    let aug = AugmentationSet::build(ds.source.dim(), &config.augment)?;
    let reference = config.reference_spec()?;
    let mut stack = EncoderStack::new(config.network.clone(), config.seed)?;
    let mut trend = Vec::new();
    let mut side_error: Option<RunError> = None;
    let every = config.eval.checkpoint_every;
    let metrics = trainer::fit(
        &mut stack,
        &ds.source.points,
        &aug,
        &reference,
        &config.trainer,
        |rec, s| {
            if side_error.is_some() {
                return;
            }
            if config.eval.track_gram {
                match eval::gram_diagnostic(s, &aug, &ds.probe_train, config.seed) {
                    Ok(g) => trend.push((rec.epoch, g.max_offdiag_abs)),
                    Err(e) => side_error = Some(e.into()),
                }
            }
            if let (Some(dir), true) = (out, every > 0 && rec.epoch % every.max(1) == 0) {
                if let Err(e) = write_checkpoint(s, &dir.join(format!("checkpoint_epoch{}.dmck", rec.epoch))) {
                    side_error = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = side_error {
        return Err(e);
    }
    let (diagnostics, accuracy, centroid_accuracy, trained_accuracy, knn_accuracy) =
        evaluate(&config, &stack, &aug, &ds)?;
    Ok(RunOutcome {
        metrics,
        trend,
        diagnostics,
        accuracy,
        centroid_accuracy,
        trained_accuracy,
        knn_accuracy,
        stack,
    })
}

fn write_artifacts(config: &RunConfig, outcome: &RunOutcome, out: &Path) -> Result<(), RunError> {
    let mut buf = Vec::new();
    trainer::write_metrics_csv(&outcome.metrics, &mut buf)?;
    write_file(out, ARTIFACT_METRICS, &buf)?;
    write_file(out, ARTIFACT_DIAGNOSTICS, diagnostics_json(&outcome.diagnostics).as_bytes())?;
    write_checkpoint(&outcome.stack, &out.join(ARTIFACT_CHECKPOINT))?;
    let mut cfg = config.resolved().to_json();
    cfg.push('\n');
    write_file(out, ARTIFACT_CONFIG, cfg.as_bytes())?;
    let mut acc = Vec::new();
    eval::write_accuracy_csv(std::slice::from_ref(&outcome.accuracy), &mut acc)?;
    write_file(out, ARTIFACT_ACCURACY, &acc)?;
    if config.eval.track_gram {
        let mut t = String::from("epoch,max_offdiag_abs\n");
        for (e, v) in &outcome.trend {
            t.push_str(&format!("{e},{v}\n"));
        }
        write_file(out, ARTIFACT_TREND, t.as_bytes())?;
    }
    Ok(())
}

/// Trains and evaluates, writing metrics.csv, diagnostics.json,
/// checkpoint.dmck, resolved_config.json and accuracy.csv into `out`.
pub fn run_experiment(config: &RunConfig, out: &Path) -> Result<RunOutcome, RunError> {
    config.resolved().validate()?;
    fs::create_dir_all(out).map_err(|e| RunError::Io(format!("{}: {e}", out.display())))?;
    let outcome = run_pipeline(config, Some(out))?;
    write_artifacts(config, &outcome, out)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub k_prime: usize,
    pub linear: Option<f64>,
    pub knn: Option<f64>,
    /// `ok`, or the failure message.
    pub status: String,
}

/// One run per `K'` with `d* = K'`, each in its own `k{K'}` subdirectory of
/// `out` when given. Failures are recorded in the summary instead of
/// aborting the sweep.
pub fn run_ablation(config: &RunConfig, k_primes: &[usize], out: Option<&Path>) -> Result<Vec<AblationRow>, RunError> {
    let mut rows = Vec::with_capacity(k_primes.len());
    for &kp in k_primes {
        let mut c = config.clone();
        c.reference.k_prime = kp;
        c.network.d_star = kp;
        let result = match out {
            Some(dir) => run_experiment(&c, &dir.join(format!("k{kp}"))),
            None => run_pipeline(&c, None),
        };
        rows.push(match result {
            Ok(o) => AblationRow {
                k_prime: kp,
                linear: Some(o.accuracy.linear),
                knn: Some(o.accuracy.knn),
                status: "ok".into(),
            },
            Err(e) => AblationRow {
                k_prime: kp,
                linear: None,
                knn: None,
                status: e.to_string(),
            },
        });
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let f = File::create(dir.join("ablation.csv"))?;
        write_ablation_csv(&rows, f)?;
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], w: W) -> Result<(), RunError> {
    let io = |e: csv::Error| RunError::Io(e.to_string());
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["k_prime", "linear", "knn", "status"]).map_err(io)?;
    for r in rows {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.write_record([r.k_prime.to_string(), f(r.linear), f(r.knn), r.status.clone()])
            .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

fn load_matching_stack(checkpoint: &Path, config: &RunConfig) -> Result<EncoderStack, RunError> {
    let f = File::open(checkpoint).map_err(|e| RunError::Io(format!("{}: {e}", checkpoint.display())))?;
    let stack = EncoderStack::load(std::io::BufReader::new(f))?;
    if stack.config != config.network {
        return Err(RunError::Invalid {
            path: "network".into(),
            reason: format!(
                "checkpoint holds {:?}, config asks for {:?}",
                stack.config, config.network
            ),
        });
    }
    Ok(stack)
}

/// Probes and diagnostics for a saved stack: writes accuracy.csv and
/// diagnostics.json into `out`.
pub fn eval_checkpoint(checkpoint: &Path, config: &RunConfig, out: &Path) -> Result<(AccuracyRow, DiagnosticsReport), RunError> {
    let config = config.resolved();
    config.validate()?;
    let stack = load_matching_stack(checkpoint, &config)?;
    let ds = load_datasets(&config)?;
    let aug = AugmentationSet::build(ds.source.dim(), &config.augment)?;
    let (diag, row, ..) = evaluate(&config, &stack, &aug, &ds)?;
    fs::create_dir_all(out)?;
    write_file(out, ARTIFACT_DIAGNOSTICS, diagnostics_json(&diag).as_bytes())?;
    let mut acc = Vec::new();
    eval::write_accuracy_csv(std::slice::from_ref(&row), &mut acc)?;
    write_file(out, ARTIFACT_ACCURACY, &acc)?;
    Ok((row, diag))
}

/// Recomputes diagnostics.json for a saved stack without training.
pub fn diag_only(checkpoint: &Path, config: &RunConfig, out: &Path) -> Result<DiagnosticsReport, RunError> {
    let config = config.resolved();
    config.validate()?;
    let stack = load_matching_stack(checkpoint, &config)?;
    let ds = load_datasets(&config)?;
    let aug = AugmentationSet::build(ds.source.dim(), &config.augment)?;
    let report = eval::diagnose(&stack, &aug, &ds.probe_train, &config.eval.diag)?;
    fs::create_dir_all(out)?;
    write_file(out, ARTIFACT_DIAGNOSTICS, diagnostics_json(&report).as_bytes())?;
    Ok(report)
}
