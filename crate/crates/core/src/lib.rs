//! Multi-hop unpaired image-to-image translation.
//!
//! One generator per direction is applied repeatedly; each application (a
//! "hop") moves an image part of the way between two domains. Training
//! interleaves per-hop updates of both generators, two least-squares
//! discriminators and a hybrid discriminator that scores intermediate images.
//!
//! Modules:
//! - [`domains`]: images, dataset ingestion, synthetic domains with analytic oracles
//! - [`networks`]: generator / PatchGAN architectures and the hop recurrence
//! - [`losses`]: cycle, adversarial, hybrid and smoothness terms
//! - [`training`]: the per-hop update schedule, checkpoints and logs
//! - [`inference`]: translating images with a trained checkpoint
//! - [`evaluation`]: hop curves, preservation scores and ablation comparison

pub mod domains;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod kernels;
pub mod losses;
pub mod networks;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
