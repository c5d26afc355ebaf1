//! Desk-scale probing pipeline for frozen bioacoustic encoder features.
//!
//! The crate covers the downstream half of a masked-autoencoder bird-sound
//! pipeline: a log-mel frontend, the stochastic augmentation stack, a
//! deterministic stand-in encoder with a binary feature-map interchange
//! format, four probe heads (linear, MLP, attentive, prototypical) trained
//! under an asymmetric multi-label loss, dataset curation and few-shot
//! sampling, and ranking metrics (class-wise mAP, macro AUROC, top-1).
//!
//! All training-path numerics run in f64 on a minimal reverse-mode tensor
//! engine ([`ndgrad`]); runs are deterministic given a seed.

pub mod augment;
pub mod curate;
pub mod featmap;
pub mod frontend;
pub mod metrics;
pub mod ndgrad;
pub mod probes;
pub mod trainer;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
