//! Run configuration.
//!
//! One plain-text file of `key=value` lines with dotted section prefixes
//! configures every command. Unknown keys are rejected by name; `--set`
//! overrides are applied after the file; `--seed` rewrites the three seed
//! keys at once. The effective configuration hashes to a 16-hex-digit
//! fingerprint (FNV-1a over the sorted key=value lines) that every emitted
//! artifact embeds, so downstream commands can refuse inputs produced under
//! a different configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use asc_core::augment::AugmentConfig;
use asc_core::fusion::{default_hierarchy, ClassHierarchy};
use asc_core::models::{ArchitectureConfig, Family, FeatureAugment};
use asc_core::nn::TrainConfig;
use asc_core::rng::fnv1a64;
use asc_core::synth::{DeviceSim, SynthSpec};
use asc_core::{Error, Result};

/// Every key the configuration accepts, with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("paths.corpus", "work/corpus"),
    ("paths.features", "work/features"),
    ("paths.checkpoints", "work/checkpoints"),
    ("paths.reports", "work/reports"),
    ("synth.clips_per_class", "5"),
    ("synth.clip_seconds", "10"),
    ("synth.sample_rate", "44100"),
    ("synth.seed", "7"),
    (
        "synth.devices",
        "a:0:0,b:-2:-1,c:1.5:0.5,s1:-6:0,s2:-4:2,s3:3:-2",
    ),
    ("features.fft", "2048"),
    ("features.window", "2048"),
    ("features.hop", "1024"),
    ("features.mels", "128"),
    (
        "augment.enabled",
        "specaugment,spectrum-correction,reverb-drc,pitch-shift,speed-change,random-noise,mix-audio",
    ),
    ("augment.mixup_alpha", "0.4"),
    ("augment.crop_frames", "400"),
    ("augment.specaug_fraction", "0.1"),
    ("augment.pitch_semitones", "-2:2"),
    ("augment.speed", "0.9:1.1"),
    ("augment.noise_sigma", "0.002:0.02"),
    ("augment.rt60", "0.2:0.8"),
    ("augment.seed", "0"),
    ("model.resnet.base_channels", "24"),
    ("model.resnet.depth", "2"),
    ("model.resnet.dropout", "0"),
    ("model.fcnn.base_channels", "16"),
    ("model.fcnn.depth", "1"),
    ("model.fcnn.dropout", "0.3"),
    ("model.fsfcnn.base_channels", "16"),
    ("model.fsfcnn.depth", "1"),
    ("model.fsfcnn.dropout", "0.3"),
    ("train.lr_max", "0.1"),
    ("train.lr_min", "0.00001"),
    ("train.restart_period_epochs", "10"),
    ("train.period_multiplier", "2"),
    ("train.momentum", "0.9"),
    ("train.batch_size", "32"),
    ("train.epochs", "60"),
    ("train.seed", "0"),
    ("train.fine_families", "resnet,fcnn,fsfcnn"),
    ("train.coarse_families", "resnet,fcnn"),
    ("fuse.coarse", "resnet,fcnn"),
    ("fuse.fine", "resnet,fcnn,fsfcnn"),
    ("hierarchy.file", ""),
    ("ablate.family", "resnet"),
    ("ablate.epochs", ""),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths resolve against (the config file's parent,
    /// or the working directory when no file was given).
    base_dir: PathBuf,
}

impl RunConfig {
    /// Builds the effective configuration: defaults, then the file, then
    /// `--set` overrides, then `--seed`.
    pub fn build(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut values: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut base_dir = PathBuf::from(".");

        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            if let Some(parent) = path.parent() {
                if parent.as_os_str().is_empty() {
                    base_dir = PathBuf::from(".");
                } else {
                    base_dir = parent.to_path_buf();
                }
            }
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::config(format!(
                        "config {} line {}: expected key=value, got {line:?}",
                        path.display(),
                        idx + 1
                    ))
                })?;
                let key = key.trim();
                if !values.contains_key(key) {
                    return Err(Error::config(format!(
                        "config {} line {}: unknown key {key:?}",
                        path.display(),
                        idx + 1
                    )));
                }
                values.insert(key.to_string(), value.trim().to_string());
            }
        }

        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set expects key=value, got {s:?}")))?;
            let key = key.trim();
            if !values.contains_key(key) {
                return Err(Error::config(format!("--set: unknown key {key:?}")));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }

        if let Some(seed) = seed {
            for key in ["synth.seed", "augment.seed", "train.seed"] {
                values.insert(key.to_string(), seed.to_string());
            }
        }

        let cfg = RunConfig { values, base_dir };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.synth_spec()?;
        self.augment_config()?;
        self.feature_params()?;
        self.train_config()?;
        self.enabled_augmentations()?;
        self.hierarchy()?;
        for family in Family::ALL {
            self.architecture(family, 10)?;
        }
        self.families("train.fine_families")?;
        self.families("train.coarse_families")?;
        self.families("fuse.coarse")?;
        self.families("fuse.fine")?;
        self.families("ablate.family")?;
        if !self.raw("ablate.epochs").is_empty() {
            self.parse::<usize>("ablate.epochs")?;
        }
        Ok(())
    }

    /// FNV-1a fingerprint of the sorted effective key=value lines.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.values {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("accessors only read declared keys")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::config(format!("config key {key}: bad value {:?}", self.raw(key))))
    }

    /// `lo:hi` pairs.
    fn parse_range(&self, key: &str) -> Result<(f64, f64)> {
        let raw = self.raw(key);
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() == 2 {
            if let (Ok(lo), Ok(hi)) = (parts[0].parse(), parts[1].parse()) {
                return Ok((lo, hi));
            }
        }
        Err(Error::config(format!(
            "config key {key}: expected lo:hi, got {raw:?}"
        )))
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.resolve(self.raw("paths.corpus"))
    }
    pub fn features_dir(&self) -> PathBuf {
        self.resolve(self.raw("paths.features"))
    }
    pub fn checkpoints_dir(&self) -> PathBuf {
        self.resolve(self.raw("paths.checkpoints"))
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(self.raw("paths.reports"))
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        let mut devices = Vec::new();
        for part in self.raw("synth.devices").split(',') {
            let fields: Vec<&str> = part.split(':').collect();
            let parsed = if fields.len() == 3 {
                match (fields[1].parse(), fields[2].parse()) {
                    (Ok(gain), Ok(tilt)) => Some(DeviceSim::new(fields[0].trim(), gain, tilt)),
                    _ => None,
                }
            } else {
                None
            };
            devices.push(parsed.ok_or_else(|| {
                Error::config(format!(
                    "config key synth.devices: expected id:gain_db:tilt, got {part:?}"
                ))
            })?);
        }
        let spec = SynthSpec {
            clips_per_class: self.parse("synth.clips_per_class")?,
            clip_seconds: self.parse("synth.clip_seconds")?,
            sample_rate: self.parse("synth.sample_rate")?,
            devices,
            seed: self.parse("synth.seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// (fft, window, hop, mels).
    pub fn feature_params(&self) -> Result<(usize, usize, usize, usize)> {
        Ok((
            self.parse("features.fft")?,
            self.parse("features.window")?,
            self.parse("features.hop")?,
            self.parse("features.mels")?,
        ))
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        let cfg = AugmentConfig {
            mixup_alpha: self.parse("augment.mixup_alpha")?,
            crop_frames: self.parse("augment.crop_frames")?,
            specaug_fraction: self.parse("augment.specaug_fraction")?,
            pitch_semitones_range: self.parse_range("augment.pitch_semitones")?,
            speed_range: self.parse_range("augment.speed")?,
            noise_sigma_range: self.parse_range("augment.noise_sigma")?,
            rt60_range: self.parse_range("augment.rt60")?,
            seed: self.parse("augment.seed")?,
            ..AugmentConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The toggleable strategies; mixup and random cropping are always
    /// applied during training and need not be listed.
    pub fn enabled_augmentations(&self) -> Result<Vec<String>> {
        let raw = self.raw("augment.enabled").trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        let names: Vec<String> = raw.split(',').map(|s| s.trim().to_string()).collect();
        for n in &names {
            if !asc_core::augment::STRATEGY_NAMES.contains(&n.as_str()) {
                return Err(Error::config(format!(
                    "config key augment.enabled: unknown strategy {n:?}"
                )));
            }
        }
        Ok(names)
    }

    /// Feature-space transforms for the training loop. Mixup and random
    /// cropping are always on; SpecAugment follows the enabled set.
    pub fn feature_augment(&self, enabled: &[String]) -> Result<FeatureAugment> {
        let aug = self.augment_config()?;
        Ok(FeatureAugment {
            crop_frames: Some(aug.crop_frames),
            mixup_alpha: Some(aug.mixup_alpha),
            specaug_fraction: enabled
                .iter()
                .any(|s| s == "specaugment")
                .then_some(aug.specaug_fraction),
        })
    }

    pub fn architecture(&self, family: Family, n_classes: usize) -> Result<ArchitectureConfig> {
        let section = format!("model.{family}");
        let cfg = ArchitectureConfig {
            family,
            n_classes,
            base_channels: self.parse(&format!("{section}.base_channels"))?,
            depth: self.parse(&format!("{section}.depth"))?,
            dropout_rate: self.parse(&format!("{section}.dropout"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let tc = TrainConfig {
            lr_max: self.parse("train.lr_max")?,
            lr_min: self.parse("train.lr_min")?,
            restart_period_epochs: self.parse("train.restart_period_epochs")?,
            period_multiplier: self.parse("train.period_multiplier")?,
            momentum: self.parse("train.momentum")?,
            batch_size: self.parse("train.batch_size")?,
            epochs: self.parse("train.epochs")?,
            seed: self.parse("train.seed")?,
        };
        tc.validate()?;
        Ok(tc)
    }

    /// Families listed under `key`, comma-separated.
    pub fn families(&self, key: &str) -> Result<Vec<Family>> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("config key {key}: unknown family {s:?}")))
            })
            .collect()
    }

    pub fn hierarchy(&self) -> Result<ClassHierarchy> {
        let raw = self.raw("hierarchy.file").trim();
        if raw.is_empty() {
            Ok(default_hierarchy())
        } else {
            ClassHierarchy::load(&self.resolve(raw))
        }
    }

    pub fn ablate_family(&self) -> Result<Family> {
        let families = self.families("ablate.family")?;
        match families.as_slice() {
            [one] => Ok(*one),
            _ => Err(Error::config(
                "config key ablate.family: exactly one family expected",
            )),
        }
    }

    /// Epoch count for ablation runs; falls back to train.epochs.
    pub fn ablate_epochs(&self) -> Result<usize> {
        let raw = self.raw("ablate.epochs").trim();
        if raw.is_empty() {
            Ok(self.train_config()?.epochs)
        } else {
            self.parse("ablate.epochs")
        }
    }
}
