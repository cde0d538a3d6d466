//! Memory-augmented multi-stage image restoration, built on a minimal
//! reverse-mode differentiation engine.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature enables the standard library for downstream convenience.
//!
//! Layout:
//! - [`tensor`] / [`ops`]: dense f64 arrays recorded on a per-forward-pass
//!   differentiation graph, with adjoints for every operation.
//! - [`memory`]: hierarchical prototype banks with cosine-softmax addressing
//!   and part/instance/semantic reads.
//! - [`network`]: the three-stage encoder-decoder with memory-augmented stage
//!   inputs, supervised attention and cross-stage fusion.
//! - [`objective`]: Charbonnier, edge, reconstruction, contrastive and total
//!   losses.
//! - [`metrics`]: PSNR, windowed SSIM and CIELAB RMSE.
//! - [`optim`]: Adam with bias correction and coupled weight decay.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
mod float;
pub mod gradcheck;
pub mod memory;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{GradMap, Graph, Tensor};
