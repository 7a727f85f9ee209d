//! Deep projection network (DPNN) for 3D volume classification.
//!
//! A compression network squeezes a `H × W × D` volume (depth slices fed as
//! channels) into a single `H × W` projection map in `[0, 1]`; a 2-D
//! classification network maps that projection to three class
//! probabilities. The compression part is pretrained to mimic
//! tensor-factorized target maps under a half-MSE minus SSIM loss, then the
//! whole network is fine-tuned end to end with cross-entropy.
//!
//! Everything runs on a small define-by-run reverse-mode autodiff engine in
//! 64-bit floating point ([`tensor`]).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod tf;
pub mod train;

pub use error::{Error, Result};
