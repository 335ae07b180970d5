//! The reference distribution: K' small spherical caps around signed
//! coordinate axes at radius R. Draws a sample, checks its geometry and
//! part frequencies, and writes it as CSV.
//!
//!     cargo run --release --example reference_sampling -- [n] [out.csv]

use std::fs::File;

use distmatch::reference::{build_reference, sample_reference, write_sample_csv};
use distmatch::rng;
use distmatch::tensor::l2_norm;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let (d_star, k_prime, radius, eps) = (6, 4, 2.0, 0.05);
    let alphas = vec![0.4, 0.3, 0.2, 0.1];
    let spec = build_reference(d_star, k_prime, radius, eps, Some(alphas.clone()), 11).unwrap();
    println!("d* = {d_star}, K' = {k_prime}, R = {radius}, eps = {eps}, signs {:?}", spec.signs);

    let sample = sample_reference(&spec, n, &mut rng::substream(11, "example/reference")).unwrap();
    let mut counts = vec![0usize; k_prime];
    let (mut worst_norm, mut worst_angle): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        let x = sample.points.row(i);
        let p = sample.part_ids[i];
        counts[p] += 1;
        worst_norm = worst_norm.max((l2_norm(x) - radius).abs());
        worst_angle = worst_angle.max(spec.angle_to_center(x, p));
        assert_eq!(spec.nearest_part(x), p, "caps are disjoint");
    }
    println!("max |norm - R| {worst_norm:.2e}; max angle {worst_angle:.6} (cap half-angle asin(eps) = {:.6})", eps.asin());
    for (p, (c, a)) in counts.iter().zip(&alphas).enumerate() {
        println!("part {}: {:.4} of samples (alpha {a})", p + 1, *c as f64 / n as f64);
    }
    if let Some(path) = args.get(1) {
        write_sample_csv(&sample, File::create(path).unwrap()).unwrap();
        println!("wrote {path}");
    }
}
