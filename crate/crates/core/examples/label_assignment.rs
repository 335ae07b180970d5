//! Matching latent classes to reference parts: the transport plan between
//! labeled representations and reference samples is summed into a class
//! mass matrix, and the mass-maximizing permutation assigns the labels.
//!
//!     cargo run --release --example label_assignment

use distmatch::ot::{assign_labels, class_mass_matrix, mallows_exact, CostKind, DiscreteMeasure};
use distmatch::reference::{build_reference, sample_reference};
use distmatch::rng;
use distmatch::tensor::Tensor;
use rand::Rng;

fn main() {
    // a three-class mass matrix; the best permutation is 1->2, 2->3, 3->1
    let mass = Tensor::from_rows(&[
        vec![1.0 / 5.0, 0.0, 2.0 / 15.0],
        vec![1.0 / 15.0, 1.0 / 30.0, 7.0 / 30.0],
        vec![4.0 / 15.0, 1.0 / 30.0, 1.0 / 30.0],
    ])
    .unwrap();
    let tau = assign_labels(&mass).unwrap();
    let kept: f64 = tau.iter().enumerate().map(|(i, &j)| mass.get(i, j)).sum();
    println!("hand-written masses: {}  (mass kept {kept:.4})", show(&tau));

    // representations: three noisy clusters near (permuted) reference parts
    let k = 3;
    let spec = build_reference(3, k, 1.0, 0.1, None, 2).unwrap();
    let mut r = rng::substream(2, "example/labels");
    let hidden = [2, 0, 1];
    let n = 90;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % k;
        let c = spec.center(hidden[class]);
        data.extend(c.iter().map(|v| v + r.random_range(-0.3..0.3)));
        labels.push(class);
    }
    let z = DiscreteMeasure::uniform(Tensor::matrix(n, 3, data).unwrap());
    let sample = sample_reference(&spec, n, &mut r).unwrap();
    let (w, coupling) = mallows_exact(&z, &DiscreteMeasure::uniform(sample.points), CostKind::L2).unwrap();
    let identity: Vec<usize> = (0..k).collect();
    let m = class_mass_matrix(&coupling, &labels, &sample.part_ids, &identity, k).unwrap();
    println!("\nW1 to reference {w:.4}; class mass matrix (rows latent class, columns part):");
    for i in 0..k {
        println!("  {:?}", m.row(i).iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
    let tau = assign_labels(&m).unwrap();
    println!("assignment {}  (generator used {})", show(&tau), show(&hidden));
}

fn show(tau: &[usize]) -> String {
    tau.iter().enumerate().map(|(i, j)| format!("{}->{}", i + 1, j + 1)).collect::<Vec<_>>().join(", ")
}
