//! How tightly do augmentations connect each class? For a grid of `sigma`,
//! keeps that fraction of every class and reports the largest augmentation
//! distance `d_A` among the kept points.
//!
//!     cargo run --release --example sigma_delta -- [noise_std] [out.csv]

use std::fs::File;

use distmatch::augment::{estimate_sigma_delta, AugmentConfig, AugmentationSet, TransformSpec};
use distmatch::data::{gen_mixture, Role};
use distmatch::runner::{DataSection, RunConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let std: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0.03);

    let cfg = RunConfig::toy(0);
    let DataSection::Mixture { mut source, .. } = cfg.data else { unreachable!() };
    source.n = 400;
    let data = gen_mixture(&source, Role::Source).expect("mixture");
    let aug = AugmentationSet::build(
        2,
        &AugmentConfig {
            transforms: vec![TransformSpec::GaussianNoise { std, copies: 4 }],
            image: None,
            seed: 0,
        },
    )
    .expect("augmentations");

    let grid = [1.0, 0.9, 0.75, 0.5];
    let report = estimate_sigma_delta(&aug, &data.points, &data.labels, data.k, &grid).expect("estimate");
    println!("noise std {std}, {} points, {} frozen transforms", data.len(), aug.len());
    println!("class  sigma  kept  delta");
    for e in &report.entries {
        let flag = if e.degenerate { "  (degenerate)" } else { "" };
        println!("{:>5}  {:>5.2}  {:>4}  {:.4}{flag}", e.class + 1, e.sigma, e.kept_count, e.delta);
    }
    if let Some(path) = args.get(1) {
        report.write_csv(File::create(path).expect("create csv")).expect("write csv");
        println!("wrote {path}");
    }
}
