//! Command-line front end. Exit status: 0 success, 1 runtime failure,
//! 2 invalid configuration or arguments, 3 training divergence.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use distmatch::augment::{estimate_sigma_delta, AugmentationSet};
use distmatch::ot::{self, CostKind};
use distmatch::reference::{build_reference, sample_reference, write_sample_csv};
use distmatch::rng;
use distmatch::runner::{self, OtMethod, OtSummary, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "dm", version, about = "Distribution-matching representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (or file, for single-file outputs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and write all run artifacts.
    Train(Common),
    /// Probe accuracy and diagnostics for a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep K' (with d* = K'), writing ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list, e.g. 2,4,8.
        #[arg(long, value_delimiter = ',')]
        k_primes: Vec<usize>,
    },
    /// Transport distance between two CSV point clouds.
    Ot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "l2")]
        cost: CostKind,
        #[arg(long, default_value = "exact")]
        method: OtMethod,
        #[arg(long, default_value_t = 1e-2)]
        reg: f64,
    },
    /// Draw reference points as CSV.
    ReferenceSample {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, default_value_t = 1000)]
        n: usize,
        /// Used when no config is given.
        #[arg(long, default_value_t = 4)]
        d_star: usize,
        #[arg(long, default_value_t = 4)]
        k_prime: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Per-class (sigma, delta) of the configured augmentations on the
    /// labeled target set.
    SigmaDelta {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,0.9,1")]
        sigmas: Vec<f64>,
    },
    /// Recompute diagnostics.json from a checkpoint.
    Diag {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn usage(reason: impl ToString) -> RunError {
    RunError::Invalid {
        path: "arguments".into(),
        reason: reason.to_string(),
    }
}

fn load_config(c: &Common) -> Result<RunConfig, RunError> {
    let path = c.config.as_ref().ok_or_else(|| usage("--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf, RunError> {
    c.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .ok_or_else(|| usage("--out is required"))
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let out = out_dir(&c, Some(&cfg))?;
            let o = runner::run_experiment(&cfg, &out)?;
            println!(
                "linear {:.4}  knn {:.4}  max_offdiag {:.4}  -> {}",
                o.accuracy.linear,
                o.accuracy.knn,
                o.diagnostics.max_offdiag_abs,
                out.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, Some(&cfg))?;
            let (row, diag) = runner::eval_checkpoint(&checkpoint, &cfg, &out)?;
            println!(
                "linear {:.4}  knn {:.4}  max_offdiag {:.4}",
                row.linear, row.knn, diag.max_offdiag_abs
            );
        }
        Command::Ablate { common, k_primes } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, Some(&cfg))?;
            let rows = runner::run_ablation(&cfg, &k_primes, Some(&out))?;
            runner::write_ablation_csv(&rows, std::io::stdout())?;
        }
        Command::Ot {
            common,
            source,
            target,
            cost,
            method,
            reg,
        } => {
            let read = |p: &Path| -> Result<_, RunError> {
                runner::read_point_csv(File::open(p).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))?)
            };
            let (mu, nu) = (read(&source)?, read(&target)?);
            let (distance, coupling) = match method {
                OtMethod::Exact => ot::mallows_exact(&mu, &nu, cost)?,
                OtMethod::Sinkhorn => {
                    let d = ot::SinkhornConfig::default();
                    ot::sinkhorn(&mu, &nu, cost, reg, d.max_iters, d.tol)?
                }
            };
            println!("{distance}");
            if let Some(out) = &common.out {
                fs::create_dir_all(out)?;
                let summary = OtSummary {
                    distance,
                    method,
                    cost,
                    reg: (method == OtMethod::Sinkhorn).then_some(reg),
                    n_source: mu.len(),
                    n_target: nu.len(),
                };
                let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
                json.push('\n');
                fs::write(out.join("ot.json"), json)?;
                runner::write_plan_csv(&coupling.plan, create(&out.join("plan.csv"))?)?;
            }
        }
        Command::ReferenceSample {
            common,
            n,
            d_star,
            k_prime,
            radius,
            epsilon,
        } => {
            let spec = match &common.config {
                Some(_) => load_config(&common)?.reference_spec()?,
                None => build_reference(d_star, k_prime, radius, epsilon, None, common.seed.unwrap_or(0))
                    .map_err(|e| usage(e))?,
            };
            let sample = sample_reference(&spec, n, &mut rng::substream(spec.seed, "reference/sample"))?;
            match &common.out {
                Some(path) => write_sample_csv(&sample, create(path)?)?,
                None => write_sample_csv(&sample, std::io::stdout())?,
            }
        }
        Command::SigmaDelta { common, sigmas } => {
            let cfg = load_config(&common)?.resolved();
            cfg.validate()?;
            let ds = runner::load_datasets(&cfg)?;
            let aug = AugmentationSet::build(ds.source.dim(), &cfg.augment)?;
            let t = &ds.probe_train;
            let report = estimate_sigma_delta(&aug, &t.points, &t.labels, t.k, &sigmas).map_err(|e| match e {
                distmatch::augment::AugmentError::Sigma(_) => usage(e),
                other => other.into(),
            })?;
            match &common.out {
                Some(path) => report.write_csv(create(path)?)?,
                None => report.write_csv(std::io::stdout())?,
            }
        }
        Command::Diag { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, Some(&cfg))?;
            let report = runner::diag_only(&checkpoint, &cfg, &out)?;
            println!(
                "max_offdiag {:.4}  psi {:?}  err_estimate {:.4}",
                report.max_offdiag_abs, report.psi, report.err_estimate
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
