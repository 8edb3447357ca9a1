//! Desk-scale testbed for box-free model watermarking and black-box
//! watermark removal attacks.
//!
//! The pipeline trains a watermarking victim (image-processing net, hiding
//! net, extraction net), seals it behind a query-counting black-box oracle,
//! and attacks it with extractor-gradient-guided removers (estimated
//! gradients), transferable proxy-trained removers, watermark overwriters,
//! and classical baselines, reporting PSNR / MS-SSIM / NC success rates.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod netcore;
pub mod removal;
pub mod victim;

pub use error::{Error, Result};
