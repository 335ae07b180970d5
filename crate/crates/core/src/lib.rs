//! Distribution matching for self-supervised transfer learning.
//!
//! An encoder is trained so that augmented views of one input land close
//! together while the distribution of all representations is pulled, in
//! Wasserstein-1 distance, toward a reference made of `K'` small spherical
//! caps around signed coordinate axes. A critic network with a gradient
//! penalty estimates the distance during training; exact network-simplex
//! and entropic Sinkhorn solvers are available as oracles and for
//! evaluation.
//!
//! Module map:
//!
//! - [`tensor`]: matrices, autodiff tape (with input gradients that can be
//!   differentiated again), Adam, `DMCK` checkpoints
//! - [`reference`]: the spherical reference distribution
//! - [`ot`]: exact and entropic transport, dual estimate, label assignment
//! - [`nn`]: encoder, projection head and critic
//! - [`augment`]: finite augmentation sets and `(sigma, delta)` estimation
//! - [`data`]: synthetic mixtures, distribution shift, CIFAR-10 reader
//! - [`trainer`]: the training objective and loop
//! - [`eval`]: probes, k-NN and separation diagnostics
//! - [`runner`]: JSON-configured experiments behind the `dm` binary

pub mod augment;
pub mod data;
pub mod eval;
pub mod nn;
pub mod ot;
pub mod reference;
pub mod rng;
pub mod runner;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tensor, Tape, Var};
