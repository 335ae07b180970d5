//! End-to-end transfer on the four-blob toy: pretrain without labels, fit
//! a nearest-centroid probe on 40 labeled points of a shifted target, and
//! report accuracy, centroid orthogonality and the loss/orthogonality trend.
//!
//!     cargo run --release --example toy_transfer -- [dual_gp|primal_exact|primal_sinkhorn] [seeds] [epochs]

use std::time::Instant;

use distmatch::eval::spearman;
use distmatch::runner::{run_pipeline, RunConfig};
use distmatch::trainer::WassersteinMode;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = match args.first().map(String::as_str).unwrap_or("dual_gp") {
        "primal_exact" => WassersteinMode::PrimalExact,
        "primal_sinkhorn" => WassersteinMode::PrimalSinkhorn,
        _ => WassersteinMode::DualGp,
    };
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: Option<usize> = args.get(2).and_then(|s| s.parse().ok());

    println!("mode {mode:?}");
    println!("seed  centroid_acc  knn_acc  max_offdiag  spearman  secs");
    for seed in 0..seeds {
        let mut cfg = RunConfig::toy(seed);
        cfg.trainer.wasserstein_mode = mode;
        cfg.eval.track_gram = true;
        if let Some(e) = epochs {
            cfg.trainer.epochs = e;
        }
        let t = Instant::now();
        let out = run_pipeline(&cfg, None).expect("toy run");
        let losses: Vec<f64> = out.metrics.iter().map(|m| m.total_loss).collect();
        let offdiag: Vec<f64> = out.trend.iter().map(|t| t.1).collect();
        let rho = spearman(&losses, &offdiag).unwrap_or(f64::NAN);
        println!(
            "{seed:>4}  {:>12.4}  {:>7.4}  {:>11.4}  {:>8.3}  {:>4.1}",
            out.centroid_accuracy,
            out.knn_accuracy,
            out.diagnostics.max_offdiag_abs,
            rho,
            t.elapsed().as_secs_f64()
        );
    }
}
