//! Weakly supervised object localization trained as domain adaptation.
//!
//! A CAM classifier (`f` conv extractor, `g` global average pooling, `e`
//! linear estimator) is trained on image-level labels. Its pixel features are
//! split per image into Universum, fake-target and true-target subsets by an
//! anchored 3-way k-means, and the true-target pixels are pulled toward the
//! pooled image features with MMD or an adversarial domain classifier while
//! Universum pixels are pushed toward zero.

pub mod ablation;
pub mod annotation;
pub mod assigner;
pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod trainer;
pub mod viz;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use par::Exec;
