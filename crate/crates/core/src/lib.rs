//! dustlab-core: a from-scratch wavelet/attention image dedusting library.
//!
//! Layers, from the bottom up:
//! - [`tensor`]: dense tensors with reverse-mode autodiff and a
//!   finite-difference gradient checker;
//! - [`wavelet`]: orthonormal 2-d DWT/IDWT (Haar and db2);
//! - [`attention`]: shifted-window self/cross attention and the parallel
//!   convolutional aggregation branch;
//! - [`net`]: the encoder-decoder restoration network, accounting, and
//!   checkpointing;
//! - [`objectives`]: training losses and evaluation metrics;
//! - [`synth`]: atmospheric-scattering dust synthesis, augmentation, image I/O;
//! - [`train`]: Adam, the training loop, and the ablation harness;
//! - [`verify`]: the self-check suites behind the `gradcheck` CLI command.

pub mod attention;
pub mod error;
pub mod net;
pub mod objectives;
pub mod param;
pub mod real;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod threads;
pub mod train;
pub mod verify;
pub mod wavelet;

pub use error::{DustError, Result};
pub use real::Real;
pub use tensor::Tensor;
