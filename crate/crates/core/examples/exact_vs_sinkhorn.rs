//! Exact transport (network simplex, Hungarian for uniform equal sizes)
//! against log-domain Sinkhorn over a regularization sweep.
//!
//!     cargo run --release --example exact_vs_sinkhorn -- [n]

use std::time::Instant;

use distmatch::ot::{mallows_exact, mallows_simplex, sinkhorn, CostKind, DiscreteMeasure};
use distmatch::rng;
use distmatch::tensor::Tensor;
use rand::Rng;

fn cloud(r: &mut impl Rng, n: usize, shift: f64) -> DiscreteMeasure {
    let pts = Tensor::matrix(n, 2, (0..2 * n).map(|_| r.random_range(0.0..1.0) + shift).collect()).unwrap();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.0)).collect();
    DiscreteMeasure::normalized(pts, w).unwrap()
}

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let mut r = rng::substream(5, "example/ot");
    let (mu, nu) = (cloud(&mut r, n, 0.0), cloud(&mut r, n + 7, 0.3));

    let t = Instant::now();
    let (exact, coupling) = mallows_exact(&mu, &nu, CostKind::L2).unwrap();
    println!("exact W1 = {exact:.6}  ({:.1} ms, marginal error {:.1e})", t.elapsed().as_secs_f64() * 1e3, coupling.marginal_violation(&mu.weights, &nu.weights));
    let support = coupling.plan.data().iter().filter(|&&v| v > 0.0).count();
    println!("plan support {support} cells (a vertex has at most n1 + n2 - 1 = {})", mu.len() + nu.len() - 1);

    println!("\n      reg    sinkhorn   rel.err      ms");
    for reg in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3] {
        let t = Instant::now();
        match sinkhorn(&mu, &nu, CostKind::L2, reg, 100_000, 1e-4) {
            Ok((s, _)) => println!("{reg:>9.0e}  {s:>10.6}  {:>8.2e}  {:>6.1}", (s - exact).abs() / exact, t.elapsed().as_secs_f64() * 1e3),
            Err(e) => println!("{reg:>9.0e}  {e}"),
        }
    }

    // uniform equal sizes: the Hungarian fast path and the simplex agree
    let a = DiscreteMeasure::uniform(Tensor::matrix(n, 2, (0..2 * n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap());
    let b = DiscreteMeasure::uniform(Tensor::matrix(n, 2, (0..2 * n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap());
    let h = mallows_exact(&a, &b, CostKind::L1).unwrap().0;
    let s = mallows_simplex(&a, &b, CostKind::L1).unwrap().0;
    println!("\nuniform {n} vs {n}, L1 cost: assignment {h:.12}, simplex {s:.12}");
}
