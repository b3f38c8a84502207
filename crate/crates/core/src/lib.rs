//! Two-stage acoustic scene classification at desk scale.
//!
//! The crate covers the full pipeline: WAV and manifest I/O with a
//! deterministic synthetic corpus generator ([`audio`], [`manifest`],
//! [`synth`]), log-mel feature extraction with deltas ([`features`]), nine
//! data-augmentation strategies ([`augment`]), a small CPU neural-network
//! engine ([`nn`]), the three classifier families and their training loop
//! ([`models`]), coarse-to-fine score fusion with device-grouped evaluation
//! ([`fusion`]), and class-activation-map saliency ([`saliency`]).

pub mod audio;
pub mod augment;
pub mod error;
pub mod features;
pub mod fusion;
pub mod manifest;
pub mod models;
pub mod nn;
pub mod rng;
pub mod saliency;
pub mod synth;

pub use audio::AudioClip;
pub use error::Error;
pub use features::FeatureTensor;
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use rng::DetRng;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
