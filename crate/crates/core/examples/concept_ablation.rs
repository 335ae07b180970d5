//! Sweep the number of reference parts `K'` (with `d* = K'`) on an
//! eight-class toy. Too few parts force distinct classes to share a part,
//! which caps what the probe can recover.
//!
//!     cargo run --release --example concept_ablation -- [seeds] [epochs] [out_dir]

use std::path::PathBuf;

use distmatch::runner::{run_ablation, RunConfig};
use distmatch::trainer::WassersteinMode;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let out = args.get(2).map(PathBuf::from);
    let k_primes = [2, 4, 8];

    println!("seed  {}", k_primes.map(|k| format!("K'={k:<2} lin/knn ")).join(""));
    for seed in 0..seeds {
        let mut cfg = RunConfig::toy_octagon(seed);
        cfg.trainer.wasserstein_mode = WassersteinMode::PrimalExact;
        cfg.trainer.epochs = epochs;
        let dir = out.as_ref().map(|d| d.join(format!("seed{seed}")));
        let rows = run_ablation(&cfg, &k_primes, dir.as_deref()).expect("ablation");
        let cells: Vec<String> = rows
            .iter()
            .map(|r| match (r.linear, r.knn) {
                (Some(l), Some(k)) => format!("{l:.3}/{k:.3}     "),
                _ => format!("{:<16}", r.status),
            })
            .collect();
        println!("{seed:>4}  {}", cells.join(""));
    }
}
