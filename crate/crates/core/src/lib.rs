//! AdaProj: an angular-margin loss that pulls embeddings toward class
//! subspaces instead of class centers, with the anomalous-sound-detection
//! pipeline around it.
//!
//! Modules, bottom-up: [`geometry`] (sphere and subspace projections),
//! [`loss_heads`] (AdaProj and the baseline losses), [`embedding_net`]
//! (two-branch network and training), [`features`] (spectrogram and spectrum
//! extraction), [`scoring_backend`] (spherical k-means scorer), [`metrics`]
//! (AUC, pAUC, official score) and [`harness`] (experiments).

pub mod binfmt;
pub mod data;
pub mod embedding_net;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod loss_heads;
pub mod metrics;
pub mod scoring_backend;

pub use data::{Domain, Label, Split};
pub use error::{Error, Result};
pub use geometry::{EmbeddingVector, SubspaceBasis};
pub use loss_heads::{AdaptiveScaleState, CenterBank, LossHead};
pub use metrics::{ScoredSample, SectionResult};
