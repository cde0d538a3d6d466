//! Command-line companion to `memnet-core`: netpbm image I/O, synthetic
//! paired degradations, dataset iteration, configuration files, binary
//! checkpoints, the two-phase trainer, and evaluation/ablation reporting.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod gradsuite;
pub mod image;
pub mod pnm;
pub mod synth;
pub mod trainer;

pub use error::{CliError, Result};
pub use image::{Image, SamplePair};
