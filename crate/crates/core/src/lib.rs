//! Spiking neural network compute library built around temporal aggregation
//! of convolutions.
//!
//! The crate provides:
//!
//! - [`tensor`]: a minimal dense tensor engine (im2col convolution, pooling,
//!   batch normalization, elementwise ops) over flat `f32` storage.
//! - [`tape`]: reverse-mode differentiation over the fixed op set, including
//!   surrogate-gradient spike generation for BPTT.
//! - [`neuron`]: leaky integrate-and-fire dynamics with configurable
//!   surrogate gradients and reset semantics.
//! - [`temporal`]: the operator family over spike trains — TAC (collapse),
//!   TAC-TP (preserve), TCC (silent-window skip), FTC (learnable biquad),
//!   IMC (channel gating) — plus temporal-resolution accounting and the
//!   membrane error probe.
//! - [`sparsity`]: analytical models and Monte-Carlo estimators for the
//!   GPU-sparsity feasibility statistics (SIMD lane skip fraction,
//!   temporal-delta density, gather counts, im2col row compressibility).
//! - [`encoding`]: Poisson rate coding, AEDAT 3.1 event-stream parsing,
//!   event binning with log-normalization, IDX loading, and synthetic
//!   desk-scale datasets.
//! - [`train`]: surrogate-gradient training of small spiking convnets with
//!   Adam, cosine schedules, and per-run conv-call accounting.
//!
//! Heavy inner loops (batched convolution, Monte-Carlo sampling, per-sample
//! encoding) run data-parallel via rayon when the `parallel` feature is
//! enabled (the default). With the feature disabled every kernel falls back
//! to the sequential path; both paths produce bit-identical results.

pub mod encoding;
pub mod exec;
pub mod neuron;
pub mod sparsity;
pub mod tape;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use exec::Exec;
pub use tensor::{ConvSpec, Tensor, TensorError};
