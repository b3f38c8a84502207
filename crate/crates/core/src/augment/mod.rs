//! Training-data augmentation.
//!
//! Nine strategies in two groups. Feature-domain transforms (mixup, random
//! crop, SpecAugment) act on batches during training and create no files.
//! Waveform-domain transforms (spectrum correction, reverb + DRC, pitch
//! shift, speed change, random noise, same-class mixing) synthesize extra
//! clips from the reference-device ("a") recordings; [`augment_dataset`]
//! writes them beside the originals and returns a manifest that records
//! which transform produced each new clip.
//!
//! Every transform is deterministic given its input and a seed.

mod feature_domain;
mod reverb;
mod spectrum;
mod waveform;

pub use feature_domain::{mixup, mixup_with, random_crop, spec_augment};
pub use reverb::{
    compress, default_drc_presets, reverb_drc, synth_rir, DrcPreset, RoomImpulseResponse,
};
pub use spectrum::{build_reference_spectrum, spectrum_correction, ReferenceSpectrum};
pub use waveform::{add_noise, mix_same_class, pitch_shift, speed_change};

use std::path::Path;

use crate::audio::{read_wav, write_wav};
use crate::error::Error;
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::rng::DetRng;
use crate::Result;

/// All nine strategy names, in the order they are documented.
pub const STRATEGY_NAMES: [&str; 9] = [
    "mixup",
    "random-crop",
    "specaugment",
    "spectrum-correction",
    "reverb-drc",
    "pitch-shift",
    "speed-change",
    "random-noise",
    "mix-audio",
];

/// The six strategies that synthesize new clips on disk.
pub const EXTRA_DATA_STRATEGIES: [&str; 6] = [
    "spectrum-correction",
    "reverb-drc",
    "pitch-shift",
    "speed-change",
    "random-noise",
    "mix-audio",
];

/// Transforms that alter the device character beyond recognition get the
/// device id "synthetic"; the rest keep the source clip's device label.
pub fn is_synthetic_device(strategy: &str) -> bool {
    matches!(strategy, "spectrum-correction" | "reverb-drc" | "mix-audio")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Beta(α, α) parameter for mixup.
    pub mixup_alpha: f64,
    /// Time length random crops are cut to.
    pub crop_frames: usize,
    /// SpecAugment stripe width as a fraction of each masked axis.
    pub specaug_fraction: f64,
    /// Uniform range the per-clip pitch shift is drawn from, in semitones.
    pub pitch_semitones_range: (f64, f64),
    /// Uniform range of playback-rate factors for speed change.
    pub speed_range: (f64, f64),
    /// Uniform range of Gaussian noise standard deviations.
    pub noise_sigma_range: (f64, f64),
    /// Compressor settings; one is chosen uniformly per reverberated clip.
    pub drc_presets: Vec<DrcPreset>,
    /// Uniform range of RT60 values for synthetic impulse responses.
    pub rt60_range: (f64, f64),
    /// Seed all per-clip randomness derives from.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mixup_alpha: 0.4,
            crop_frames: 400,
            specaug_fraction: 0.10,
            pitch_semitones_range: (-2.0, 2.0),
            speed_range: (0.9, 1.1),
            noise_sigma_range: (0.002, 0.02),
            drc_presets: default_drc_presets(),
            rt60_range: (0.2, 0.8),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::config("mixup_alpha must be positive"));
        }
        if self.crop_frames == 0 {
            return Err(Error::config("crop_frames must be at least 1"));
        }
        if !(self.specaug_fraction > 0.0 && self.specaug_fraction < 1.0) {
            return Err(Error::config("specaug_fraction must be in (0, 1)"));
        }
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.pitch_semitones_range)
            || self.pitch_semitones_range.0 < -12.0
            || self.pitch_semitones_range.1 > 12.0
        {
            return Err(Error::config(
                "pitch_semitones_range must be ordered and within ±12",
            ));
        }
        if !ordered(self.speed_range) || self.speed_range.0 <= 0.0 {
            return Err(Error::config("speed_range must be ordered and positive"));
        }
        if !ordered(self.noise_sigma_range) || self.noise_sigma_range.0 < 0.0 {
            return Err(Error::config(
                "noise_sigma_range must be ordered and non-negative",
            ));
        }
        if self.drc_presets.is_empty() {
            return Err(Error::config("drc_presets must not be empty"));
        }
        for p in &self.drc_presets {
            if p.ratio < 1.0 || p.attack_ms <= 0.0 || p.release_ms <= 0.0 {
                return Err(Error::config(
                    "drc presets need ratio >= 1 and positive attack/release",
                ));
            }
        }
        if !ordered(self.rt60_range) || self.rt60_range.0 <= 0.0 {
            return Err(Error::config("rt60_range must be ordered and positive"));
        }
        Ok(())
    }
}

/// File name for an augmented copy: the original stem plus
/// `.aug-<strategy>-<seed>.wav`, in the same directory.
pub fn augmented_path(original: &str, strategy: &str, seed: u64) -> String {
    let stem = original.strip_suffix(".wav").unwrap_or(original);
    format!("{stem}.aug-{strategy}-{seed}.wav")
}

/// Generates one new clip per enabled extra-data strategy for every
/// training clip of device "a", writing WAVs beside the originals.
///
/// Returns the input manifest extended with the new entries: scene kept,
/// split kept at train, device relabeled per [`is_synthetic_device`], and
/// `source_transform` set to the strategy name. Feature-domain strategies
/// in `enabled` are ignored here — they act at training time. Unknown
/// strategy names are an error.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    config: &AugmentConfig,
    enabled: &[&str],
) -> Result<DatasetManifest> {
    config.validate()?;
    for name in enabled {
        if !STRATEGY_NAMES.contains(name) {
            return Err(Error::config(format!(
                "unknown augmentation strategy {name:?}; expected one of {STRATEGY_NAMES:?}"
            )));
        }
    }
    let active: Vec<&str> = EXTRA_DATA_STRATEGIES
        .iter()
        .copied()
        .filter(|s| enabled.contains(s))
        .collect();

    let mut out = manifest.clone();
    if active.is_empty() {
        return Ok(out);
    }

    let spectra = if active.contains(&"spectrum-correction") {
        Some(build_reference_spectrum(manifest)?)
    } else {
        None
    };

    // Same-class partners for mix-audio: device-a training clips per scene.
    let a_train: Vec<&ManifestEntry> = manifest
        .split(Split::Train)
        .filter(|e| e.device == "a")
        .collect();

    for entry in &a_train {
        let clip = read_wav(&manifest.clip_path(entry))?;
        for &strategy in &active {
            let mut rng = DetRng::derive_str(config.seed, &[strategy, &entry.path]);
            let produced = match strategy {
                "spectrum-correction" => {
                    let (reference, src_a) = spectra.as_ref().expect("built above");
                    spectrum_correction(&clip, reference, src_a)?
                }
                "reverb-drc" => {
                    let rt60 = rng.range(config.rt60_range.0, config.rt60_range.1);
                    let length = ((rt60 * clip.sample_rate as f64).ceil() as usize).max(2);
                    let rir = synth_rir(rt60, length, clip.sample_rate, &mut rng)?;
                    let preset = config.drc_presets[rng.below(config.drc_presets.len())];
                    reverb_drc(&clip, &rir, &preset)?
                }
                "pitch-shift" => {
                    let s = rng.range(
                        config.pitch_semitones_range.0,
                        config.pitch_semitones_range.1,
                    );
                    pitch_shift(&clip, s)?
                }
                "speed-change" => {
                    let rate = rng.range(config.speed_range.0, config.speed_range.1);
                    speed_change(&clip, rate)?
                }
                "random-noise" => {
                    let sigma =
                        rng.range(config.noise_sigma_range.0, config.noise_sigma_range.1);
                    add_noise(&clip, sigma, &mut rng)?
                }
                "mix-audio" => {
                    let partners: Vec<&&ManifestEntry> = a_train
                        .iter()
                        .filter(|e| e.scene == entry.scene && e.path != entry.path)
                        .collect();
                    let partner = if partners.is_empty() {
                        entry
                    } else {
                        partners[rng.below(partners.len())]
                    };
                    let other = read_wav(&manifest.clip_path(partner))?;
                    mix_same_class(&clip, &entry.scene, &other, &partner.scene)?
                }
                _ => unreachable!("filtered to extra-data strategies"),
            };

            let rel = augmented_path(&entry.path, strategy, config.seed);
            let abs = match &manifest.base_dir {
                Some(base) => base.join(&rel),
                None => Path::new(&rel).to_path_buf(),
            };
            write_wav(&abs, &produced)?;
            out.entries.push(ManifestEntry {
                path: rel,
                scene: entry.scene.clone(),
                device: if is_synthetic_device(strategy) {
                    "synthetic".to_string()
                } else {
                    entry.device.clone()
                },
                split: Split::Train,
                source_transform: Some(strategy.to_string()),
            });
        }
    }
    Ok(out)
}
