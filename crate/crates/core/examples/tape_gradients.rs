//! Reverse-mode gradients on the recording tape: parameter gradients via
//! `backward`, an input gradient via `input_gradient`, and a gradient
//! penalty differentiated a second time. Each is compared with central
//! differences.
//!
//!     cargo run --release --example tape_gradients

use distmatch::nn::{EncoderStack, StackConfig};
use distmatch::tensor::{Tape, Tensor};

fn penalty(stack: &EncoderStack, z: &Tensor) -> (f64, distmatch::tensor::Gradients) {
    let mut tape = Tape::new();
    let zv = tape.input("z", z.clone()).unwrap();
    let g = stack.criticize_on(&mut tape, zv, true).unwrap();
    let total = tape.sum_all(g).unwrap();
    let dz = tape.input_gradient(total, zv).unwrap();
    let norm = tape.row_norm(dz).unwrap();
    let dev = tape.add_scalar(norm, -1.0).unwrap();
    let sq = tape.mul(dev, dev).unwrap();
    let gp = tape.mean_all(sq).unwrap();
    let value = tape.value(gp).item();
    (value, tape.backward(gp).unwrap())
}

fn main() {
    let config = StackConfig {
        input_dim: 2,
        encoder_hidden: vec![8],
        d_star: 3,
        head_hidden: None,
        critic_hidden: vec![8, 3],
        radius: 1.0,
    };
    let stack = EncoderStack::new(config, 7).unwrap();
    let x = Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.4], vec![-0.5, 0.9]]).unwrap();

    // input gradient of sum(critic(encoder(x))) with respect to x
    let mut tape = Tape::new();
    let xv = tape.input("x", x.clone()).unwrap();
    let z = stack.encode_on(&mut tape, xv, false, false).unwrap();
    let g = stack.criticize_on(&mut tape, z, false).unwrap();
    let total = tape.sum_all(g).unwrap();
    let dx = tape.input_gradient(total, xv).unwrap();
    let analytic = tape.value(dx).clone();
    let f = |x: &Tensor| -> f64 { stack.criticize(&stack.encode(x, false).unwrap()).unwrap().iter().sum() };
    let h = 1e-6;
    println!("d/dx sum g(f(x)):   analytic vs central difference");
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.set(i, j, x.get(i, j) + h);
            m.set(i, j, x.get(i, j) - h);
            println!("  x[{i}][{j}]  {:+.9}  {:+.9}", analytic.get(i, j), (f(&p) - f(&m)) / (2.0 * h));
        }
    }

    // the gradient penalty is itself a function of the input gradient;
    // its parameter gradient needs a second differentiation
    let z = stack.encode(&x, false).unwrap();
    let (gp, grads) = penalty(&stack, &z);
    println!("\ngradient penalty {gp:.6}; d/dtheta for the first critic weights:");
    let name = "critic.w0";
    let w = &stack.params[name];
    for i in 0..3 {
        let mut plus = stack.clone();
        plus.params.get_mut(name).unwrap().data_mut()[i] += h;
        let mut minus = stack.clone();
        minus.params.get_mut(name).unwrap().data_mut()[i] -= h;
        let fd = (penalty(&plus, &z).0 - penalty(&minus, &z).0) / (2.0 * h);
        println!("  {name}[{i}] = {:+.4}   {:+.9}  {:+.9}", w.data()[i], grads.get(name).unwrap().data()[i], fd);
    }
}
