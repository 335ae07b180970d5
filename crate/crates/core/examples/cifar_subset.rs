//! Pretrain on a slice of CIFAR-10 (binary version) and probe the encoder.
//! Slow on one core; meant as a smoke run of the image path, not a result.
//!
//!     cargo run --release --example cifar_subset -- <data_batch_1.bin> <test_batch.bin> [train_limit] [epochs]

use std::path::PathBuf;

use distmatch::augment::{AugmentConfig, TransformSpec};
use distmatch::data::CIFAR_DIM;
use distmatch::runner::{run_pipeline, DataSection, RunConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (Some(train), Some(test)) = (args.first(), args.get(1)) else {
        println!("usage: cifar_subset <train.bin> <test.bin> [train_limit] [epochs]");
        return;
    };
    if !PathBuf::from(train).exists() || !PathBuf::from(test).exists() {
        println!("CIFAR-10 binary batches not found; nothing to do");
        return;
    }
    let limit: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);

    let mut cfg = RunConfig::toy(0);
    cfg.data = DataSection::Cifar10 {
        train: vec![train.into()],
        test: vec![test.into()],
        train_limit: Some(limit),
        test_limit: Some(1000),
        probe_train: limit.min(1000),
    };
    cfg.augment = AugmentConfig {
        transforms: vec![
            TransformSpec::CropResize { min_area: 0.5, max_area: 1.0, copies: 4 },
            TransformSpec::HorizontalFlip,
            TransformSpec::GaussianNoise { std: 0.02, copies: 2 },
        ],
        image: Some([3, 32, 32]),
        seed: 0,
    };
    cfg.reference.k_prime = 10;
    cfg.network.input_dim = CIFAR_DIM;
    cfg.network.encoder_hidden = vec![256, 128];
    cfg.network.d_star = 16;
    cfg.network.critic_hidden = vec![64, 16];
    cfg.trainer.epochs = epochs;
    cfg.trainer.batch_size = 128;
    cfg.eval.dataset_name = "cifar10".into();

    let out = run_pipeline(&cfg, None).expect("cifar run");
    println!(
        "{} epochs on {limit} images: centroid {:.4}, knn {:.4}, max off-diagonal {:.4}",
        epochs, out.centroid_accuracy, out.knn_accuracy, out.diagnostics.max_offdiag_abs
    );
}
