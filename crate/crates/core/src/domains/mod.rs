//! Images, dataset ingestion and synthetic two-domain families.

pub mod dataset;
pub mod image;
pub mod oracle;
pub mod synth;

pub use dataset::{load_unpaired_dataset, sample_batch, Batch, DomainLabel, UnpairedDataset};
pub use image::Image;
pub use oracle::domain_oracle_score;
pub use synth::{synth_generate, FamilyId, SyntheticFamily};
