//! The nine pipeline subcommands.
//!
//! Every stage stamps the artifacts it writes with the effective
//! configuration fingerprint and checks the fingerprint on the artifacts it
//! reads, so a run assembled from stages of different configurations fails
//! loudly instead of producing quietly wrong numbers. `--force` downgrades
//! those checks for deliberate mixing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use asc_core::audio::read_wav;
use asc_core::augment::augment_dataset;
use asc_core::features::{
    cache_path, feature_tensor_with, read_feature_cache, write_feature_cache,
};
use asc_core::fusion::{
    self, coarse_labels, default_device_groups, device_report, format_report, ClassHierarchy,
    ScoreTable,
};
use asc_core::manifest::{scene_index, DatasetManifest, ManifestEntry, Split, SCENES};
use asc_core::models::{self, FeatureAugment, Model, TrainingOutcome};
use asc_core::nn::TrainConfig;
use asc_core::saliency;
use asc_core::synth::synth_dataset;
use asc_core::{Error, FeatureTensor, Result};

use crate::config::RunConfig;

pub struct Ctx {
    pub cfg: RunConfig,
    pub force: bool,
}

/// The two classifier stages and the config keys naming their families.
const STAGES: [(&str, &str); 2] = [
    ("fine", "train.fine_families"),
    ("coarse", "train.coarse_families"),
];

// --- fingerprint plumbing ---------------------------------------------------

const HASH_KEY: &str = "config_hash";

fn hash_comment(cfg: &RunConfig) -> String {
    format!("{HASH_KEY}={}", cfg.hash())
}

/// Checks the `config_hash=` comment an artifact carries against the current
/// configuration; `--force` skips the check.
fn verify_hash(ctx: &Ctx, comments: &[String], what: &str) -> Result<()> {
    if ctx.force {
        return Ok(());
    }
    let expected = ctx.cfg.hash();
    let prefix = format!("{HASH_KEY}=");
    match comments.iter().find_map(|c| c.trim().strip_prefix(&prefix)) {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(Error::config(format!(
            "{what} was produced under configuration {h}, but the current configuration is \
             {expected}; rerun the upstream stages or pass --force"
        ))),
        None => Err(Error::config(format!(
            "{what} carries no configuration fingerprint; pass --force to use it anyway"
        ))),
    }
}

fn verify_meta_hash(ctx: &Ctx, meta: &[(String, String)], path: &Path) -> Result<()> {
    let comments: Vec<String> = meta
        .iter()
        .filter(|(k, _)| k == HASH_KEY)
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    verify_hash(ctx, &comments, &format!("checkpoint {}", path.display()))
}

// --- artifact locations ------------------------------------------------------

fn base_manifest_path(ctx: &Ctx) -> PathBuf {
    ctx.cfg.corpus_dir().join("manifest.csv")
}

fn augmented_manifest_path(ctx: &Ctx) -> PathBuf {
    ctx.cfg.corpus_dir().join("manifest-augmented.csv")
}

fn checkpoint_path(ctx: &Ctx, family: models::Family, stage: &str) -> PathBuf {
    ctx.cfg.checkpoints_dir().join(format!("{family}-{stage}.ckpt"))
}

fn scores_path(ctx: &Ctx, stage: &str, name: &str) -> PathBuf {
    ctx.cfg.reports_dir().join(format!("scores-{stage}-{name}.csv"))
}

fn missing(path: &Path, hint: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found; {hint}", path.display()),
    ))
}

fn load_manifest(ctx: &Ctx, path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(missing(path, "run `asc synth-data` first"));
    }
    let m = DatasetManifest::load(path)?;
    verify_hash(ctx, &m.comments, &format!("manifest {}", path.display()))?;
    Ok(m)
}

/// The manifest training and scoring read: the augmented one when the
/// augment stage has run, otherwise the base corpus manifest.
fn load_working_manifest(ctx: &Ctx) -> Result<DatasetManifest> {
    let augmented = augmented_manifest_path(ctx);
    if augmented.exists() {
        load_manifest(ctx, &augmented)
    } else {
        load_manifest(ctx, &base_manifest_path(ctx))
    }
}

// --- feature cache helpers ---------------------------------------------------

/// Cache file for a clip: the clip's manifest-relative path moved under the
/// features directory, with `.feat` appended.
fn feature_file(features_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    cache_path(&features_dir.join(&entry.path))
}

fn load_features_for(features_dir: &Path, entry: &ManifestEntry) -> Result<FeatureTensor> {
    let path = feature_file(features_dir, entry);
    if !path.exists() {
        return Err(Error::FeatureCache {
            path: path.display().to_string(),
            detail: "missing; run `asc features` first".into(),
        });
    }
    read_feature_cache(&path)
}

fn load_tensor_set(features_dir: &Path, entries: &[&ManifestEntry]) -> Result<Vec<FeatureTensor>> {
    entries
        .par_iter()
        .map(|e| load_features_for(features_dir, e))
        .collect()
}

/// Extracts and caches features for every manifest entry, skipping clips
/// already cached unless `refresh`. Returns how many were computed.
fn extract_features(ctx: &Ctx, manifest: &DatasetManifest, refresh: bool) -> Result<usize> {
    let (fft, window, hop, mels) = ctx.cfg.feature_params()?;
    let out_dir = ctx.cfg.features_dir();
    let fresh: Vec<bool> = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<bool> {
            let out = feature_file(&out_dir, entry);
            if out.exists() && !refresh {
                return Ok(false);
            }
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let clip = read_wav(&manifest.clip_path(entry))?;
            let tensor = feature_tensor_with(&clip, fft, window, hop, mels)?;
            write_feature_cache(&out, &tensor)?;
            Ok(true)
        })
        .collect::<Result<_>>()?;
    Ok(fresh.iter().filter(|&&f| f).count())
}

// --- per-stage helpers -------------------------------------------------------

fn stage_labels(stage: &str, h: &ClassHierarchy) -> Vec<String> {
    if stage == "fine" {
        SCENES.iter().map(|s| s.to_string()).collect()
    } else {
        h.coarse_classes().to_vec()
    }
}

fn stage_label_index(stage: &str, h: &ClassHierarchy, scene: &str) -> Result<usize> {
    let fine = scene_index(scene)
        .ok_or_else(|| Error::config(format!("unknown scene label {scene:?}")))?;
    if stage == "fine" {
        Ok(fine)
    } else {
        Ok(h.parent_index(fine))
    }
}

/// Trains one freshly initialized model and returns it with its outcome.
fn fit_model(
    ctx: &Ctx,
    family: models::Family,
    n_classes: usize,
    dataset: &[(FeatureTensor, usize)],
    tc: &TrainConfig,
    aug: &FeatureAugment,
) -> Result<(Model, TrainingOutcome)> {
    let arch = ctx.cfg.architecture(family, n_classes)?;
    let mut model = Model::build(&arch, tc.seed)?;
    let outcome = models::train(&mut model, dataset, tc, aug)?;
    Ok((model, outcome))
}

fn training_report(
    ctx: &Ctx,
    model: &Model,
    tc: &TrainConfig,
    aug: &FeatureAugment,
    outcome: &TrainingOutcome,
) -> String {
    let mut text = format!("{}\n", hash_comment(&ctx.cfg));
    text.push_str(&models::run_metadata(model, tc, aug, outcome));
    for (i, loss) in outcome.loss_curve.iter().enumerate() {
        let _ = writeln!(text, "epoch {:>3} loss {loss:.6}", i + 1);
    }
    text
}

/// Scores `entries` with a model into a table over `labels`, one row per
/// clip in manifest order.
fn score_entries(
    model: &Model,
    entries: &[&ManifestEntry],
    tensors: &[FeatureTensor],
    labels: Vec<String>,
) -> Result<ScoreTable> {
    let rows: Vec<(String, Vec<f64>)> = entries
        .par_iter()
        .zip(tensors.par_iter())
        .map(|(e, t)| model.predict(t).map(|p| (e.path.clone(), p)))
        .collect::<Result<_>>()?;
    ScoreTable::new(labels, rows)
}

// --- subcommands -------------------------------------------------------------

pub fn synth_data(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.synth_spec()?;
    let dir = ctx.cfg.corpus_dir();
    std::fs::create_dir_all(&dir)?;
    let mut manifest = synth_dataset(&spec, &dir)?;
    manifest.comments = vec![hash_comment(&ctx.cfg)];
    manifest.save(&base_manifest_path(ctx))?;
    println!(
        "synthesized {} clips ({} scenes x {} clips x {} devices) under {}",
        manifest.entries.len(),
        SCENES.len(),
        spec.clips_per_class,
        spec.devices.len(),
        dir.display()
    );
    Ok(())
}

pub fn features(ctx: &Ctx) -> Result<()> {
    let manifest = load_working_manifest(ctx)?;
    let fresh = extract_features(ctx, &manifest, ctx.force)?;
    let out_dir = ctx.cfg.features_dir();
    let mut copy = manifest.clone();
    copy.comments = vec![hash_comment(&ctx.cfg)];
    copy.save(&out_dir.join("manifest.csv"))?;
    println!(
        "cached features for {} clips ({} computed, {} reused) under {}",
        manifest.entries.len(),
        fresh,
        manifest.entries.len() - fresh,
        out_dir.display()
    );
    Ok(())
}

pub fn augment(ctx: &Ctx) -> Result<()> {
    let manifest = load_manifest(ctx, &base_manifest_path(ctx))?;
    let aug_cfg = ctx.cfg.augment_config()?;
    let enabled = ctx.cfg.enabled_augmentations()?;
    let refs: Vec<&str> = enabled.iter().map(String::as_str).collect();
    let mut out = augment_dataset(&manifest, &aug_cfg, &refs)?;
    let added = out.entries.len() - manifest.entries.len();
    out.comments = vec![hash_comment(&ctx.cfg)];
    let path = augmented_manifest_path(ctx);
    out.save(&path)?;
    println!(
        "synthesized {added} augmented clips; extended manifest: {}",
        path.display()
    );
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let manifest = load_working_manifest(ctx)?;
    let h = ctx.cfg.hierarchy()?;
    let tc = ctx.cfg.train_config()?;
    let enabled = ctx.cfg.enabled_augmentations()?;
    let aug = ctx.cfg.feature_augment(&enabled)?;
    let features_dir = ctx.cfg.features_dir();
    std::fs::create_dir_all(ctx.cfg.checkpoints_dir())?;
    std::fs::create_dir_all(ctx.cfg.reports_dir())?;

    let entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(Error::config("manifest has no training clips"));
    }
    let tensors = load_tensor_set(&features_dir, &entries)?;

    for (stage, families_key) in STAGES {
        let labels = stage_labels(stage, &h);
        let dataset: Vec<(FeatureTensor, usize)> = entries
            .iter()
            .zip(&tensors)
            .map(|(e, t)| Ok((t.clone(), stage_label_index(stage, &h, &e.scene)?)))
            .collect::<Result<_>>()?;
        for family in ctx.cfg.families(families_key)? {
            let (model, outcome) = fit_model(ctx, family, labels.len(), &dataset, &tc, &aug)?;
            let ckpt = checkpoint_path(ctx, family, stage);
            let meta = vec![
                (HASH_KEY.to_string(), ctx.cfg.hash()),
                ("stage".to_string(), stage.to_string()),
                ("final_loss".to_string(), format!("{:.6}", outcome.final_loss)),
            ];
            models::save_checkpoint(&ckpt, &model, &meta)?;
            let report = ctx
                .cfg
                .reports_dir()
                .join(format!("train-{family}-{stage}.txt"));
            std::fs::write(&report, training_report(ctx, &model, &tc, &aug, &outcome))?;
            println!(
                "trained {family} ({stage}): {} clips, {} steps, final loss {:.4} -> {}",
                dataset.len(),
                outcome.steps,
                outcome.final_loss,
                ckpt.display()
            );
        }
    }
    Ok(())
}

pub fn predict(ctx: &Ctx) -> Result<()> {
    let manifest = load_working_manifest(ctx)?;
    let h = ctx.cfg.hierarchy()?;
    let features_dir = ctx.cfg.features_dir();
    std::fs::create_dir_all(ctx.cfg.reports_dir())?;

    let entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
    if entries.is_empty() {
        return Err(Error::config("manifest has no test clips"));
    }
    let tensors = load_tensor_set(&features_dir, &entries)?;

    for (stage, families_key) in STAGES {
        let labels = stage_labels(stage, &h);
        for family in ctx.cfg.families(families_key)? {
            let ckpt = checkpoint_path(ctx, family, stage);
            if !ckpt.exists() {
                return Err(missing(&ckpt, "run `asc train` first"));
            }
            let (model, meta) = models::load_checkpoint(&ckpt)?;
            verify_meta_hash(ctx, &meta, &ckpt)?;
            let mut table = score_entries(&model, &entries, &tensors, labels.clone())?;
            table.comments = vec![hash_comment(&ctx.cfg)];
            let out = scores_path(ctx, stage, &family.to_string());
            table.save(&out)?;
            println!(
                "scored {} test clips with {family} ({stage}) -> {}",
                entries.len(),
                out.display()
            );
        }
    }
    Ok(())
}

pub fn fuse(ctx: &Ctx) -> Result<()> {
    let h = ctx.cfg.hierarchy()?;
    let reports = ctx.cfg.reports_dir();
    std::fs::create_dir_all(&reports)?;

    let ensemble_stage = |stage: &str, families_key: &str| -> Result<ScoreTable> {
        let mut tables = Vec::new();
        for family in ctx.cfg.families(families_key)? {
            let path = scores_path(ctx, stage, &family.to_string());
            if !path.exists() {
                return Err(missing(&path, "run `asc predict` first"));
            }
            let table = ScoreTable::load(&path)?;
            verify_hash(ctx, &table.comments, &format!("score table {}", path.display()))?;
            tables.push(table);
        }
        let mut out = fusion::ensemble(&tables, None)?;
        out.comments = vec![hash_comment(&ctx.cfg)];
        Ok(out)
    };

    let coarse = ensemble_stage("coarse", "fuse.coarse")?;
    coarse.save(&scores_path(ctx, "coarse", "ensemble"))?;
    let fine = ensemble_stage("fine", "fuse.fine")?;
    fine.save(&scores_path(ctx, "fine", "ensemble"))?;

    let (predictions, mut fused) = fusion::fuse_two_stage(&coarse, &fine, &h)?;
    fused.comments = vec![hash_comment(&ctx.cfg)];
    let fused_path = reports.join("scores-fused.csv");
    fused.save(&fused_path)?;

    let mut text = format!("# {}\nclip_id,prediction\n", hash_comment(&ctx.cfg));
    for (clip, label) in &predictions {
        let _ = writeln!(text, "{clip},{label}");
    }
    std::fs::write(reports.join("predictions-fused.csv"), text)?;
    println!(
        "fused coarse and fine scores for {} clips -> {}",
        predictions.len(),
        fused_path.display()
    );
    Ok(())
}

pub fn evaluate(ctx: &Ctx, scores: Option<&Path>) -> Result<()> {
    let reports = ctx.cfg.reports_dir();
    let default = reports.join("scores-fused.csv");
    let path = scores.unwrap_or(&default);
    if !path.exists() {
        return Err(missing(path, "run `asc fuse` first, or pass --scores"));
    }
    let table = ScoreTable::load(path)?;
    verify_hash(ctx, &table.comments, &format!("score table {}", path.display()))?;

    let manifest = load_manifest(ctx, &base_manifest_path(ctx))?;
    let h = ctx.cfg.hierarchy()?;
    // A coarse-stage table is scored against coarse-relabeled references.
    let truth = if table.labels.iter().all(|l| h.coarse_index(l).is_some()) {
        coarse_labels(&manifest, &h)
    } else {
        manifest
    };

    let report = device_report(&table.predictions(), &truth, &default_device_groups())?;
    let text = format!("{}\n{}", hash_comment(&ctx.cfg), format_report(&report));

    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scores");
    std::fs::create_dir_all(&reports)?;
    let out = reports.join(format!("report-{stem}.txt"));
    std::fs::write(&out, &text)?;
    print!("{text}");
    println!("report written to {}", out.display());
    Ok(())
}

pub fn cam(ctx: &Ctx, clips: &[String], target: Option<&str>) -> Result<()> {
    let ckpt = checkpoint_path(ctx, models::Family::Resnet, "fine");
    if !ckpt.exists() {
        return Err(missing(
            &ckpt,
            "activation maps need the fine-stage resnet; run `asc train`",
        ));
    }
    let (model, meta) = models::load_checkpoint(&ckpt)?;
    verify_meta_hash(ctx, &meta, &ckpt)?;

    let manifest = load_working_manifest(ctx)?;
    let features_dir = ctx.cfg.features_dir();
    let out_dir = ctx.cfg.reports_dir().join("cam");
    std::fs::create_dir_all(&out_dir)?;

    let selected: Vec<&ManifestEntry> = if clips.is_empty() {
        SCENES
            .iter()
            .filter_map(|s| manifest.split(Split::Test).find(|e| e.scene == *s))
            .collect()
    } else {
        clips
            .iter()
            .map(|c| {
                manifest
                    .entries
                    .iter()
                    .find(|e| &e.path == c)
                    .ok_or_else(|| Error::config(format!("clip {c:?} is not in the manifest")))
            })
            .collect::<Result<_>>()?
    };
    if selected.is_empty() {
        return Err(Error::config("no clips to map"));
    }

    for entry in selected {
        let features = load_features_for(&features_dir, entry)?;
        let class = target.unwrap_or(&entry.scene);
        let class_idx = scene_index(class)
            .ok_or_else(|| Error::config(format!("unknown scene label {class:?}")))?;
        let map = saliency::compute_cam(&model, &features, class_idx, &entry.path)?;
        let marginal = saliency::time_marginal(&map);
        let peak = marginal
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0;
        let stem_name = entry
            .path
            .trim_end_matches(".wav")
            .replace(['/', '\\'], "-");
        let stem = out_dir.join(format!("{stem_name}-{class}"));
        saliency::export_heatmap(&map, &stem)?;
        println!(
            "cam {}: target {class}, peak at frame {peak} of {} -> {}.ppm",
            entry.path,
            marginal.len(),
            stem.display()
        );
    }
    Ok(())
}

pub fn ablate(ctx: &Ctx) -> Result<()> {
    let base = load_manifest(ctx, &base_manifest_path(ctx))?;
    let family = ctx.cfg.ablate_family()?;
    let mut tc = ctx.cfg.train_config()?;
    tc.epochs = ctx.cfg.ablate_epochs()?;
    let aug_cfg = ctx.cfg.augment_config()?;
    let features_dir = ctx.cfg.features_dir();
    let out_dir = ctx.cfg.reports_dir().join("ablate");
    std::fs::create_dir_all(&out_dir)?;

    // Cumulative augmentation sets; mixup and random cropping are on
    // throughout, so the first row is the feature-domain-only reference.
    let sets: [(&str, &[&str]); 5] = [
        ("none", &[]),
        ("specaugment", &["specaugment"]),
        (
            "spectrum-correction",
            &["specaugment", "spectrum-correction"],
        ),
        (
            "reverb-drc",
            &["specaugment", "spectrum-correction", "reverb-drc"],
        ),
        (
            "all-extra",
            &[
                "specaugment",
                "spectrum-correction",
                "reverb-drc",
                "pitch-shift",
                "speed-change",
                "random-noise",
                "mix-audio",
            ],
        ),
    ];

    let labels: Vec<String> = SCENES.iter().map(|s| s.to_string()).collect();
    for (i, (name, enabled)) in sets.iter().enumerate() {
        let manifest = augment_dataset(&base, &aug_cfg, enabled)?;
        extract_features(ctx, &manifest, false)?;

        let train_entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
        let train_tensors = load_tensor_set(&features_dir, &train_entries)?;
        let dataset: Vec<(FeatureTensor, usize)> = train_entries
            .iter()
            .zip(&train_tensors)
            .map(|(e, t)| {
                Ok((
                    t.clone(),
                    scene_index(&e.scene)
                        .ok_or_else(|| Error::config(format!("unknown scene {:?}", e.scene)))?,
                ))
            })
            .collect::<Result<_>>()?;

        let aug = FeatureAugment {
            crop_frames: Some(aug_cfg.crop_frames),
            mixup_alpha: Some(aug_cfg.mixup_alpha),
            specaug_fraction: enabled
                .contains(&"specaugment")
                .then_some(aug_cfg.specaug_fraction),
        };
        let (model, outcome) = fit_model(ctx, family, labels.len(), &dataset, &tc, &aug)?;

        let test_entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
        let test_tensors = load_tensor_set(&features_dir, &test_entries)?;
        let mut table = score_entries(&model, &test_entries, &test_tensors, labels.clone())?;
        table.comments = vec![hash_comment(&ctx.cfg), format!("augmentations={name}")];
        table.save(&out_dir.join(format!("scores-{i}-{name}.csv")))?;

        let report = device_report(&table.predictions(), &base, &default_device_groups())?;
        let text = format!(
            "{}\naugmentations={name}\ntrain_clips={}\nfinal_loss={:.6}\n\n{}",
            hash_comment(&ctx.cfg),
            dataset.len(),
            outcome.final_loss,
            format_report(&report)
        );
        std::fs::write(out_dir.join(format!("report-{i}-{name}.txt")), text)?;

        let groups: Vec<String> = report
            .groups
            .iter()
            .map(|g| format!("{} {:.1}%", g.name, 100.0 * g.accuracy))
            .collect();
        println!(
            "ablate {name:<20} overall {:>5.1}%  ({})",
            100.0 * report.overall,
            groups.join(", ")
        );
    }
    Ok(())
}
