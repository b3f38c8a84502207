//! Coarse-to-fine score fusion and device-grouped evaluation.
//!
//! The scene labels form a two-level hierarchy: every fine scene belongs to
//! one of a handful of coarse categories (indoor, outdoor, transportation by
//! default). A [`ScoreTable`] holds per-clip class probabilities; tables from
//! several models can be averaged with [`ensemble`], and a 3-class coarse
//! table can be combined with a 10-class fine table via [`fuse_two_stage`],
//! which scores each fine class by the product of its own probability and its
//! parent category's probability. [`device_report`] turns predictions into
//! per-device-group accuracies plus a confusion matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::Error;
use crate::manifest::{scene_index, DatasetManifest, ManifestEntry, SCENES};
use crate::Result;

/// Default coarse categories, in canonical order. Category indices in
/// 3-class score tables refer to this order.
pub const COARSE_CLASSES: [&str; 3] = ["indoor", "outdoor", "transportation"];

/// Two-level label hierarchy: a total map from the ten fine scenes onto a
/// set of coarse categories.
///
/// Constructed via [`default_hierarchy`] or loaded from a file with
/// [`ClassHierarchy::load`]; both paths validate that the map is total, that
/// every category has at least one child, and that a category named
/// `transportation` covers exactly {bus, tram, metro}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHierarchy {
    coarse: Vec<String>,
    /// `parent[i]` is the coarse index for `SCENES[i]`.
    parent: [usize; 10],
}

impl ClassHierarchy {
    /// Builds a hierarchy from `(fine, coarse)` pairs. Coarse categories are
    /// ordered by first appearance.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut coarse: Vec<String> = Vec::new();
        let mut parent = [usize::MAX; 10];
        for (fine, c) in pairs {
            let fi = scene_index(fine)
                .ok_or_else(|| Error::config(format!("hierarchy: unknown scene {fine:?}")))?;
            if parent[fi] != usize::MAX {
                return Err(Error::config(format!(
                    "hierarchy: scene {fine:?} listed twice"
                )));
            }
            let ci = match coarse.iter().position(|x| x == c) {
                Some(i) => i,
                None => {
                    coarse.push(c.clone());
                    coarse.len() - 1
                }
            };
            parent[fi] = ci;
        }
        let h = ClassHierarchy { coarse, parent };
        h.validate()?;
        Ok(h)
    }

    /// Reads a hierarchy file: one `fine,coarse` pair per line, `#` comments
    /// and an optional `fine,coarse` header line allowed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line == "fine,coarse" {
                continue;
            }
            let (fine, coarse) = line.split_once(',').ok_or_else(|| {
                Error::config(format!(
                    "hierarchy {}: expected fine,coarse — got {line:?}",
                    path.display()
                ))
            })?;
            pairs.push((fine.trim().to_string(), coarse.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    fn validate(&self) -> Result<()> {
        for (i, &p) in self.parent.iter().enumerate() {
            if p == usize::MAX {
                return Err(Error::config(format!(
                    "hierarchy: scene {:?} has no coarse category",
                    SCENES[i]
                )));
            }
        }
        // Every category has a child by construction (categories only exist
        // once a pair names them), so only the transportation set needs
        // checking.
        let ti = self.coarse.iter().position(|c| c == "transportation");
        let Some(ti) = ti else {
            return Err(Error::config(
                "hierarchy: missing the transportation category".to_string(),
            ));
        };
        let children: BTreeSet<&str> = SCENES
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.parent[i] == ti)
            .map(|(_, &s)| s)
            .collect();
        let expected: BTreeSet<&str> = ["bus", "tram", "metro"].into_iter().collect();
        if children != expected {
            return Err(Error::config(format!(
                "hierarchy: transportation must cover exactly bus, tram, metro — got {children:?}"
            )));
        }
        Ok(())
    }

    /// Coarse category names, in index order.
    pub fn coarse_classes(&self) -> &[String] {
        &self.coarse
    }

    /// Index of a coarse category, if present.
    pub fn coarse_index(&self, name: &str) -> Option<usize> {
        self.coarse.iter().position(|c| c == name)
    }

    /// Coarse index for the fine class at `fine_idx` (canonical scene order).
    pub fn parent_index(&self, fine_idx: usize) -> usize {
        self.parent[fine_idx]
    }

    /// Coarse category name for a fine scene label.
    pub fn parent_of(&self, scene: &str) -> Option<&str> {
        scene_index(scene).map(|i| self.coarse[self.parent[i]].as_str())
    }

    /// Fine scenes under a coarse category, in canonical scene order.
    pub fn children(&self, coarse: &str) -> Vec<&'static str> {
        match self.coarse_index(coarse) {
            Some(ci) => SCENES
                .iter()
                .enumerate()
                .filter(|&(i, _)| self.parent[i] == ci)
                .map(|(_, &s)| s)
                .collect(),
            None => Vec::new(),
        }
    }
}

impl Default for ClassHierarchy {
    fn default() -> Self {
        default_hierarchy()
    }
}

/// The standard grouping: indoor = {airport, shopping_mall, metro_station},
/// outdoor = {park, public_square, street_pedestrian, street_traffic},
/// transportation = {bus, tram, metro}.
pub fn default_hierarchy() -> ClassHierarchy {
    let assign = |scene: &str| match scene {
        "airport" | "shopping_mall" | "metro_station" => 0,
        "park" | "public_square" | "street_pedestrian" | "street_traffic" => 1,
        _ => 2,
    };
    let mut parent = [0usize; 10];
    for (i, &s) in SCENES.iter().enumerate() {
        parent[i] = assign(s);
    }
    ClassHierarchy {
        coarse: COARSE_CLASSES.iter().map(|s| s.to_string()).collect(),
        parent,
    }
}

/// Returns a copy of `manifest` with every scene label replaced by its coarse
/// category, for training the coarse-stage classifier. The result is an
/// in-memory view: its labels are category names, so it is not meant to be
/// written out and reloaded as a scene manifest.
pub fn coarse_labels(manifest: &DatasetManifest, h: &ClassHierarchy) -> DatasetManifest {
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            scene: h
                .parent_of(&e.scene)
                .expect("manifest scenes are validated fine labels")
                .to_string(),
            ..e.clone()
        })
        .collect();
    DatasetManifest {
        entries,
        comments: manifest.comments.clone(),
        base_dir: manifest.base_dir.clone(),
    }
}

/// Per-clip class probabilities for one model (or one fused system).
///
/// Rows keep their insertion order; clip ids are unique; every row is a
/// probability vector over `labels` (entries ≥ 0, sum 1 ± 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub labels: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    /// `#`-prefixed lines found before the header, without the `#`.
    pub comments: Vec<String>,
}

impl ScoreTable {
    pub fn new(labels: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let t = ScoreTable {
            labels,
            rows,
            comments: Vec::new(),
        };
        t.validate("<memory>")?;
        Ok(t)
    }

    fn validate(&self, path: &str) -> Result<()> {
        let fail = |line: usize, detail: String| {
            Err(Error::ScoreTable {
                path: path.to_string(),
                line,
                detail,
            })
        };
        if self.labels.is_empty() {
            return fail(0, "empty class list".into());
        }
        let mut seen = HashSet::new();
        for (r, (clip, probs)) in self.rows.iter().enumerate() {
            let line = r + 2; // header is line 1 in the file layout
            if !seen.insert(clip.as_str()) {
                return fail(line, format!("duplicate clip id {clip:?}"));
            }
            if probs.len() != self.labels.len() {
                return fail(
                    line,
                    format!("{} probabilities, expected {}", probs.len(), self.labels.len()),
                );
            }
            let mut sum = 0.0;
            for &p in probs {
                if !p.is_finite() || p < 0.0 {
                    return fail(line, format!("invalid probability {p}"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return fail(line, format!("row sums to {sum}, expected 1 within 1e-6"));
            }
        }
        Ok(())
    }

    /// Reads a score file: optional `#` comments, a `clip_id,<labels>` header,
    /// then one `clip,p1,...,pN` row per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let path_str = path.display().to_string();
        let fail = |line: usize, detail: String| {
            Err(Error::ScoreTable {
                path: path_str.clone(),
                line,
                detail,
            })
        };
        let mut labels: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        let mut comments = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if labels.is_none() {
                if cols.first() != Some(&"clip_id") || cols.len() < 2 {
                    return fail(line_no, "header must be clip_id,<labels>".into());
                }
                labels = Some(cols[1..].iter().map(|s| s.to_string()).collect());
                continue;
            }
            let n = labels.as_ref().unwrap().len();
            if cols.len() != n + 1 {
                return fail(line_no, format!("{} columns, expected {}", cols.len(), n + 1));
            }
            let mut probs = Vec::with_capacity(n);
            for c in &cols[1..] {
                match c.parse::<f64>() {
                    Ok(v) => probs.push(v),
                    Err(_) => return fail(line_no, format!("unparseable probability {c:?}")),
                }
            }
            rows.push((cols[0].to_string(), probs));
        }
        let Some(labels) = labels else {
            return fail(0, "missing header".into());
        };
        let t = ScoreTable {
            labels,
            rows,
            comments,
        };
        t.validate(&path_str)?;
        Ok(t)
    }

    /// Writes the table with probabilities at ten significant digits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str("clip_id");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (clip, probs) in &self.rows {
            out.push_str(clip);
            for &p in probs {
                let _ = write!(out, ",{p:.9e}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Highest-probability label per clip, ties broken toward the lowest
    /// class index.
    pub fn predictions(&self) -> Vec<(String, String)> {
        self.rows
            .iter()
            .map(|(clip, probs)| (clip.clone(), self.labels[argmax(probs)].clone()))
            .collect()
    }
}

/// Index of the maximum entry; the lowest index wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Averages score tables element-wise.
///
/// All tables must share the same class list and the same clip-id sequence.
/// Without explicit weights every table counts equally and the result is the
/// arithmetic mean; explicit weights are applied as given and the rows are
/// renormalized to sum 1 only when the weights do not already sum to 1.
pub fn ensemble(tables: &[ScoreTable], weights: Option<&[f64]>) -> Result<ScoreTable> {
    let k = tables.len();
    if k == 0 {
        return Err(Error::config("ensemble of zero tables"));
    }
    let first = &tables[0];
    for t in &tables[1..] {
        if t.labels != first.labels {
            return Err(Error::ScoreMismatch {
                detail: format!("class lists differ: {:?} vs {:?}", first.labels, t.labels),
            });
        }
        if t.rows.len() != first.rows.len() {
            return Err(Error::ScoreMismatch {
                detail: format!("{} rows vs {}", first.rows.len(), t.rows.len()),
            });
        }
        for (a, b) in first.rows.iter().zip(&t.rows) {
            if a.0 != b.0 {
                return Err(Error::ScoreMismatch {
                    detail: format!("clip id {:?} vs {:?}", a.0, b.0),
                });
            }
        }
    }

    let rows = match weights {
        None => {
            // Mean as base + Σ(tᵢ − base)/k rather than Σtᵢ/k: identical
            // inputs give zero differences, so k copies of a table average
            // back to that table bit-for-bit.
            first
                .rows
                .iter()
                .enumerate()
                .map(|(r, (clip, base))| {
                    let n = base.len();
                    let mut diff = vec![0.0; n];
                    for t in &tables[1..] {
                        for (d, (&v, &b)) in diff.iter_mut().zip(t.rows[r].1.iter().zip(base)) {
                            *d += v - b;
                        }
                    }
                    let out: Vec<f64> = base
                        .iter()
                        .zip(&diff)
                        .map(|(&b, &d)| b + d / k as f64)
                        .collect();
                    (clip.clone(), out)
                })
                .collect::<Vec<_>>()
        }
        Some(w) => {
            if w.len() != k {
                return Err(Error::config(format!(
                    "{} weights for {} tables",
                    w.len(),
                    k
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::config("ensemble weights must be finite and ≥ 0"));
            }
            let sum: f64 = w.iter().sum();
            if sum <= 0.0 {
                return Err(Error::config("ensemble weights sum to zero"));
            }
            let renorm = (sum - 1.0).abs() > 1e-9;
            first
                .rows
                .iter()
                .enumerate()
                .map(|(r, (clip, _))| {
                    let n = first.labels.len();
                    let mut out = vec![0.0; n];
                    for (t, &wi) in tables.iter().zip(w) {
                        for (o, &v) in out.iter_mut().zip(&t.rows[r].1) {
                            *o += wi * v;
                        }
                    }
                    if renorm {
                        let s: f64 = out.iter().sum();
                        for o in &mut out {
                            *o /= s;
                        }
                    }
                    (clip.clone(), out)
                })
                .collect()
        }
    };
    ScoreTable::new(first.labels.clone(), rows)
}

/// Combines a coarse-category table with a fine-scene table.
///
/// Each fine class is scored by the product of its own probability and its
/// parent category's probability; the prediction is the argmax of these
/// products (lowest class index on ties), taken before any renormalization.
/// The returned table holds the products renormalized to sum 1 per row for
/// reporting — renormalization never changes the argmax. A row whose products
/// are all zero renormalizes to uniform.
pub fn fuse_two_stage(
    coarse: &ScoreTable,
    fine: &ScoreTable,
    h: &ClassHierarchy,
) -> Result<(Vec<(String, String)>, ScoreTable)> {
    if coarse.rows.len() != fine.rows.len() {
        return Err(Error::ScoreMismatch {
            detail: format!(
                "{} coarse rows vs {} fine rows",
                coarse.rows.len(),
                fine.rows.len()
            ),
        });
    }
    for (a, b) in coarse.rows.iter().zip(&fine.rows) {
        if a.0 != b.0 {
            return Err(Error::ScoreMismatch {
                detail: format!("clip id {:?} vs {:?}", a.0, b.0),
            });
        }
    }
    // Column of each fine class's parent within the coarse table.
    let parent_col: Vec<usize> = fine
        .labels
        .iter()
        .map(|l| {
            let fi = scene_index(l).ok_or_else(|| Error::ScoreMismatch {
                detail: format!("fine table class {l:?} is not a scene label"),
            })?;
            let cat = &h.coarse_classes()[h.parent_index(fi)];
            coarse
                .labels
                .iter()
                .position(|c| c == cat)
                .ok_or_else(|| Error::ScoreMismatch {
                    detail: format!("coarse table lacks category {cat:?}"),
                })
        })
        .collect::<Result<_>>()?;

    let mut predictions = Vec::with_capacity(fine.rows.len());
    let mut rows = Vec::with_capacity(fine.rows.len());
    for (crow, frow) in coarse.rows.iter().zip(&fine.rows) {
        let products: Vec<f64> = frow
            .1
            .iter()
            .zip(&parent_col)
            .map(|(&fq, &pc)| crow.1[pc] * fq)
            .collect();
        let best = argmax(&products);
        predictions.push((frow.0.clone(), fine.labels[best].clone()));
        let sum: f64 = products.iter().sum();
        let normed: Vec<f64> = if sum > 0.0 {
            products.iter().map(|&p| p / sum).collect()
        } else {
            vec![1.0 / products.len() as f64; products.len()]
        };
        rows.push((frow.0.clone(), normed));
    }
    Ok((predictions, ScoreTable::new(fine.labels.clone(), rows)?))
}

/// Named device groups for reporting; each group pools the listed device ids.
pub type DeviceGroups = Vec<(String, Vec<String>)>;

/// The standard grouping: the high-quality reference device, the two real
/// secondary devices, and the two simulated-device triples.
pub fn default_device_groups() -> DeviceGroups {
    vec![
        ("A".to_string(), vec!["a".to_string()]),
        ("B&C".to_string(), vec!["b".to_string(), "c".to_string()]),
        (
            "s1-s3".to_string(),
            vec!["s1".to_string(), "s2".to_string(), "s3".to_string()],
        ),
        (
            "s4-s6".to_string(),
            vec!["s4".to_string(), "s5".to_string(), "s6".to_string()],
        ),
    ]
}

/// Accuracy pooled over one device group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAccuracy {
    pub name: String,
    pub devices: Vec<String>,
    pub correct: usize,
    pub total: usize,
    /// `correct / total`, in [0, 1].
    pub accuracy: f64,
}

/// Device-grouped evaluation of a set of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceGroupReport {
    /// One entry per requested group that matched at least one clip.
    pub groups: Vec<GroupAccuracy>,
    /// `(device, correct, total)` for every device seen, sorted by device id.
    pub per_device: Vec<(String, usize, usize)>,
    /// Mean of per-device accuracies over all devices seen.
    pub overall: f64,
    /// Class list the confusion matrix is indexed by.
    pub labels: Vec<String>,
    /// `confusion[t][p]` counts clips of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
    pub clips: usize,
}

/// Scores `predictions` (clip id → label) against the manifest's reference
/// labels, grouped by recording device.
///
/// Group accuracy pools correct/total over the group's devices; groups that
/// match no clip are dropped. The overall figure is the unweighted mean of
/// per-device accuracies, which equals the clip-weighted accuracy when every
/// device contributes the same number of clips. Every predicted clip must
/// appear in the manifest.
pub fn device_report(
    predictions: &[(String, String)],
    manifest: &DatasetManifest,
    groups: &DeviceGroups,
) -> Result<DeviceGroupReport> {
    if predictions.is_empty() {
        return Err(Error::config("no predictions to score"));
    }
    let by_path: HashMap<&str, &ManifestEntry> = manifest
        .entries
        .iter()
        .map(|e| (e.path.as_str(), e))
        .collect();

    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut outcomes: Vec<(&ManifestEntry, &str, bool)> = Vec::with_capacity(predictions.len());
    for (clip, label) in predictions {
        let entry = by_path.get(clip.as_str()).ok_or_else(|| Error::ScoreMismatch {
            detail: format!("prediction for clip {clip:?} not present in the manifest"),
        })?;
        if !seen.insert(clip.as_str()) {
            return Err(Error::ScoreMismatch {
                detail: format!("duplicate prediction for clip {clip:?}"),
            });
        }
        let correct = entry.scene == *label;
        let t = tally.entry(entry.device.as_str()).or_insert((0, 0));
        t.0 += correct as usize;
        t.1 += 1;
        outcomes.push((entry, label.as_str(), correct));
    }

    let mut group_rows = Vec::new();
    for (name, devices) in groups {
        let mut correct = 0;
        let mut total = 0;
        for d in devices {
            if let Some(&(c, t)) = tally.get(d.as_str()) {
                correct += c;
                total += t;
            }
        }
        if total > 0 {
            group_rows.push(GroupAccuracy {
                name: name.clone(),
                devices: devices.clone(),
                correct,
                total,
                accuracy: correct as f64 / total as f64,
            });
        }
    }

    let per_device: Vec<(String, usize, usize)> = tally
        .iter()
        .map(|(&d, &(c, t))| (d.to_string(), c, t))
        .collect();
    let overall = per_device
        .iter()
        .map(|&(_, c, t)| c as f64 / t as f64)
        .sum::<f64>()
        / per_device.len() as f64;

    // Confusion axes: the canonical scene list when everything observed is a
    // scene label (coarse-stage evaluations use category names instead).
    let observed: BTreeSet<&str> = outcomes
        .iter()
        .flat_map(|&(e, p, _)| [e.scene.as_str(), p])
        .collect();
    let labels: Vec<String> = if observed.iter().all(|l| scene_index(l).is_some()) {
        SCENES.iter().map(|s| s.to_string()).collect()
    } else {
        observed.iter().map(|s| s.to_string()).collect()
    };
    let index: HashMap<&str, usize> = labels.iter().map(|l| l.as_str()).zip(0..).collect();
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    for &(entry, pred, _) in &outcomes {
        confusion[index[entry.scene.as_str()]][index[pred]] += 1;
    }

    Ok(DeviceGroupReport {
        groups: group_rows,
        per_device,
        overall,
        labels,
        confusion,
        clips: predictions.len(),
    })
}

/// Renders a report as a plain-text table followed by a machine-readable
/// `key=value` block.
pub fn format_report(report: &DeviceGroupReport) -> String {
    let mut out = String::new();
    out.push_str("accuracy by device group\n\n");
    let _ = writeln!(out, "{:<8} {:<10} {:>6}  {:>8}", "group", "devices", "clips", "accuracy");
    for g in &report.groups {
        let _ = writeln!(
            out,
            "{:<8} {:<10} {:>6}  {:>7.2}%",
            g.name,
            g.devices.join(" "),
            g.total,
            100.0 * g.accuracy
        );
    }
    let _ = writeln!(
        out,
        "\noverall (mean over {} devices): {:.2}%",
        report.per_device.len(),
        100.0 * report.overall
    );

    out.push_str("\nconfusion matrix (rows: reference, columns: prediction index)\n");
    for (i, label) in report.labels.iter().enumerate() {
        let _ = write!(out, "{i:>3} {label:<18}");
        for &n in &report.confusion[i] {
            let _ = write!(out, " {n:>5}");
        }
        out.push('\n');
    }

    out.push('\n');
    let _ = writeln!(out, "clips={}", report.clips);
    let _ = writeln!(out, "overall={:.6}", report.overall);
    for g in &report.groups {
        let _ = writeln!(out, "group.{}={:.6}", g.name, g.accuracy);
    }
    for (d, c, t) in &report.per_device {
        let _ = writeln!(out, "device.{}={:.6}", d, *c as f64 / *t as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Split;

    fn table(labels: &[&str], rows: &[(&str, &[f64])]) -> ScoreTable {
        ScoreTable::new(
            labels.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .map(|(c, p)| (c.to_string(), p.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_hierarchy_partitions_the_scenes() {
        let h = default_hierarchy();
        assert_eq!(h.coarse_classes().to_vec(), COARSE_CLASSES.map(String::from).to_vec());
        assert_eq!(h.children("indoor").len(), 3);
        assert_eq!(h.children("outdoor").len(), 4);
        assert_eq!(h.children("transportation"), vec!["tram", "bus", "metro"]);
        assert_eq!(h.parent_of("bus"), Some("transportation"));
        assert_eq!(h.parent_of("public_square"), Some("outdoor"));
        assert_eq!(h.parent_of("airport"), Some("indoor"));
        let total: usize = COARSE_CLASSES.iter().map(|c| h.children(c).len()).sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn hierarchy_files_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");

        // A custom split that moves airport outdoors is allowed.
        let mut text = String::from("# test hierarchy\nfine,coarse\n");
        for &s in &SCENES {
            let c = match s {
                "bus" | "tram" | "metro" => "transportation",
                "shopping_mall" | "metro_station" => "indoor",
                _ => "outdoor",
            };
            text.push_str(&format!("{s},{c}\n"));
        }
        std::fs::write(&path, &text).unwrap();
        let h = ClassHierarchy::load(&path).unwrap();
        assert_eq!(h.parent_of("airport"), Some("outdoor"));
        assert_eq!(h.children("indoor").len(), 2);

        // Missing scene.
        std::fs::write(&path, "airport,indoor\n").unwrap();
        assert!(ClassHierarchy::load(&path).is_err());

        // Duplicate scene.
        let dup = format!("{text}airport,indoor\n");
        std::fs::write(&path, dup).unwrap();
        assert!(ClassHierarchy::load(&path).is_err());

        // Transportation must be exactly bus, tram, metro.
        let bad = text.replace("bus,transportation", "bus,outdoor");
        std::fs::write(&path, bad).unwrap();
        assert!(ClassHierarchy::load(&path).is_err());

        // Unknown fine label.
        std::fs::write(&path, format!("{text}beach,outdoor\n")).unwrap();
        assert!(ClassHierarchy::load(&path).is_err());
    }

    #[test]
    fn coarse_labels_relabels_every_entry() {
        let entries: Vec<ManifestEntry> = SCENES
            .iter()
            .enumerate()
            .map(|(i, &s)| ManifestEntry {
                path: format!("c{i}.wav"),
                scene: s.to_string(),
                device: "a".to_string(),
                split: Split::Train,
                source_transform: None,
            })
            .collect();
        let m = DatasetManifest::new(entries).unwrap();
        let coarse = coarse_labels(&m, &default_hierarchy());
        assert_eq!(coarse.entries.len(), 10);
        for e in &coarse.entries {
            assert!(COARSE_CLASSES.contains(&e.scene.as_str()));
        }
        let n_indoor = coarse.entries.iter().filter(|e| e.scene == "indoor").count();
        let n_outdoor = coarse.entries.iter().filter(|e| e.scene == "outdoor").count();
        let n_transport = coarse
            .entries
            .iter()
            .filter(|e| e.scene == "transportation")
            .count();
        assert_eq!((n_indoor, n_outdoor, n_transport), (3, 4, 3));
    }

    #[test]
    fn score_table_rejects_malformed_rows() {
        let labels = vec!["x".to_string(), "y".to_string()];
        // Bad sum.
        assert!(ScoreTable::new(labels.clone(), vec![("a".into(), vec![0.6, 0.5])]).is_err());
        // Negative entry.
        assert!(ScoreTable::new(labels.clone(), vec![("a".into(), vec![1.2, -0.2])]).is_err());
        // Wrong width.
        assert!(ScoreTable::new(labels.clone(), vec![("a".into(), vec![1.0])]).is_err());
        // Duplicate clip.
        assert!(ScoreTable::new(
            labels,
            vec![("a".into(), vec![0.5, 0.5]), ("a".into(), vec![0.5, 0.5])]
        )
        .is_err());
    }

    #[test]
    fn score_table_round_trips_through_files() {
        let t = table(
            &["x", "y", "z"],
            &[
                ("c1.wav", &[0.123456789, 0.2, 0.676543211]),
                ("c2.wav", &[1.0, 0.0, 0.0]),
            ],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let mut with_comment = t.clone();
        with_comment.comments.push("config_hash=cafef00d".into());
        with_comment.save(&path).unwrap();
        let back = ScoreTable::load(&path).unwrap();
        assert_eq!(back.labels, t.labels);
        assert_eq!(back.comments, vec!["config_hash=cafef00d".to_string()]);
        for (a, b) in back.rows.iter().zip(&t.rows) {
            assert_eq!(a.0, b.0);
            for (x, y) in a.1.iter().zip(&b.1) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }

        // A parse failure names the line.
        std::fs::write(&path, "clip_id,x,y\nc1.wav,0.5,oops\n").unwrap();
        match ScoreTable::load(&path) {
            Err(Error::ScoreTable { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ScoreTable error, got {other:?}"),
        }
    }

    #[test]
    fn ensemble_averages_and_checks_alignment() {
        let a = table(&["x", "y"], &[("c", &[0.6, 0.4])]);
        let b = table(&["x", "y"], &[("c", &[0.2, 0.8])]);
        let mean = ensemble(&[a.clone(), b.clone()], None).unwrap();
        assert!((mean.rows[0].1[0] - 0.4).abs() < 1e-12);
        assert!((mean.rows[0].1[1] - 0.6).abs() < 1e-12);

        // Identical tables come back exactly, including k = 3.
        let same = ensemble(&[a.clone(), a.clone(), a.clone()], None).unwrap();
        assert_eq!(same.rows, a.rows);

        // Explicit weights that do not sum to 1 trigger renormalization.
        let w = ensemble(&[a.clone(), b.clone()], Some(&[2.0, 2.0])).unwrap();
        let sum: f64 = w.rows[0].1.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((w.rows[0].1[0] - 0.4).abs() < 1e-12);

        // Misaligned ids and labels are errors.
        let c = table(&["x", "y"], &[("other", &[0.5, 0.5])]);
        assert!(matches!(
            ensemble(&[a.clone(), c], None),
            Err(Error::ScoreMismatch { .. })
        ));
        let d = table(&["x", "z"], &[("c", &[0.5, 0.5])]);
        assert!(matches!(
            ensemble(&[a, d], None),
            Err(Error::ScoreMismatch { .. })
        ));
    }

    fn fine_row(airport: f64, park: f64, bus: f64) -> Vec<f64> {
        let rest = (1.0 - airport - park - bus) / 7.0;
        SCENES
            .iter()
            .map(|&s| match s {
                "airport" => airport,
                "park" => park,
                "bus" => bus,
                _ => rest,
            })
            .collect()
    }

    #[test]
    fn coarse_stage_can_override_the_fine_argmax() {
        let h = default_hierarchy();
        let coarse = table(&COARSE_CLASSES, &[("c", &[0.2, 0.3, 0.5])]);
        let fine = ScoreTable::new(
            SCENES.iter().map(|s| s.to_string()).collect(),
            vec![("c".to_string(), fine_row(0.30, 0.28, 0.20))],
        )
        .unwrap();
        // Fine-only argmax is airport; the products favour bus:
        // airport 0.2·0.30 = 0.060, park 0.3·0.28 = 0.084, bus 0.5·0.20 = 0.100.
        assert_eq!(fine.predictions()[0].1, "airport");
        let (preds, fused) = fuse_two_stage(&coarse, &fine, &h).unwrap();
        assert_eq!(preds[0].1, "bus");
        let sum: f64 = fused.rows[0].1.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let bus = scene_index("bus").unwrap();
        let park = scene_index("park").unwrap();
        assert!(
            (fused.rows[0].1[bus] / fused.rows[0].1[park] - 0.100 / 0.084).abs() < 1e-12,
            "renormalization must preserve score ratios"
        );
    }

    #[test]
    fn uniform_coarse_rows_leave_fine_predictions_unchanged() {
        let h = default_hierarchy();
        let coarse = table(&COARSE_CLASSES, &[("c", &[1.0 / 3.0; 3])]);
        let fine = ScoreTable::new(
            SCENES.iter().map(|s| s.to_string()).collect(),
            vec![("c".to_string(), fine_row(0.30, 0.28, 0.20))],
        )
        .unwrap();
        let (preds, _) = fuse_two_stage(&coarse, &fine, &h).unwrap();
        assert_eq!(preds[0].1, fine.predictions()[0].1);
    }

    #[test]
    fn one_hot_coarse_confines_the_prediction_to_its_children() {
        let h = default_hierarchy();
        let coarse = table(&COARSE_CLASSES, &[("c", &[0.0, 0.0, 1.0])]);
        let fine = ScoreTable::new(
            SCENES.iter().map(|s| s.to_string()).collect(),
            vec![("c".to_string(), fine_row(0.60, 0.20, 0.05))],
        )
        .unwrap();
        let (preds, _) = fuse_two_stage(&coarse, &fine, &h).unwrap();
        assert!(h.children("transportation").contains(&preds[0].1.as_str()));
    }

    /// Builds a single-device manifest slice plus predictions hitting exactly
    /// `correct` of `total` clips, offset so paths stay unique across devices.
    fn device_block(
        device: &str,
        correct: usize,
        total: usize,
        entries: &mut Vec<ManifestEntry>,
        preds: &mut Vec<(String, String)>,
    ) {
        for i in 0..total {
            let path = format!("{device}_{i}.wav");
            let scene = SCENES[i % SCENES.len()];
            entries.push(ManifestEntry {
                path: path.clone(),
                scene: scene.to_string(),
                device: device.to_string(),
                split: Split::Test,
                source_transform: None,
            });
            let predicted = if i < correct {
                scene
            } else {
                SCENES[(i + 1) % SCENES.len()]
            };
            preds.push((path, predicted.to_string()));
        }
    }

    /// Overall accuracy (percent) for per-group accuracies (percent) applied
    /// uniformly to 1000 clips per device.
    fn overall_for(groups_pct: [f64; 4]) -> (DeviceGroupReport, f64) {
        let device_sets: [&[&str]; 4] = [&["a"], &["b", "c"], &["s1", "s2", "s3"], &["s4", "s5", "s6"]];
        let mut entries = Vec::new();
        let mut preds = Vec::new();
        for (pct, devices) in groups_pct.iter().zip(device_sets) {
            let correct = (pct * 10.0).round() as usize;
            for &d in devices {
                device_block(d, correct, 1000, &mut entries, &mut preds);
            }
        }
        let manifest = DatasetManifest::new(entries).unwrap();
        let report = device_report(&preds, &manifest, &default_device_groups()).unwrap();
        let overall = 100.0 * report.overall;
        (report, overall)
    }

    #[test]
    fn group_accuracies_average_over_devices() {
        let (report, overall) = overall_for([70.6, 61.6, 53.3, 44.3]);
        assert_eq!(report.clips, 9000);
        assert_eq!(report.groups.len(), 4);
        assert!((100.0 * report.groups[0].accuracy - 70.6).abs() < 1e-9);
        assert!((100.0 * report.groups[1].accuracy - 61.6).abs() < 1e-9);
        assert!((overall - 54.1).abs() < 0.05, "got {overall}");

        let (_, overall) = overall_for([87.9, 84.1, 80.4, 79.9]);
        assert!((overall - 81.9).abs() < 0.05, "got {overall}");
    }

    #[test]
    fn published_averages_reconstruct_from_group_accuracies() {
        // Reference systems whose overall figure matches the device mean of
        // their group accuracies to the printed precision.
        let rows: [([f64; 4], f64); 8] = [
            ([70.6, 61.6, 53.3, 44.3], 54.1),
            ([87.3, 79.5, 75.7, 73.0], 76.9),
            ([83.9, 78.6, 75.4, 72.8], 76.2),
            ([87.0, 81.5, 78.0, 76.9], 79.4),
            ([84.5, 78.6, 76.2, 76.4], 77.7),
            ([89.1, 82.9, 78.5, 76.9], 80.1),
            ([83.9, 81.2, 78.6, 76.4], 79.0),
            ([87.9, 84.1, 80.4, 79.9], 81.9),
        ];
        for (groups, avg) in rows {
            let (_, overall) = overall_for(groups);
            let exact = (groups[0] + 2.0 * groups[1] + 3.0 * groups[2] + 3.0 * groups[3]) / 9.0;
            assert!((overall - exact).abs() < 1e-9);
            assert!((overall - avg).abs() < 0.05, "{groups:?}: {overall} vs {avg}");
        }
    }

    #[test]
    fn all_correct_predictions_score_one_everywhere() {
        let (report, _) = overall_for([100.0, 100.0, 100.0, 100.0]);
        assert!((report.overall - 1.0).abs() < 1e-12);
        for g in &report.groups {
            assert!((g.accuracy - 1.0).abs() < 1e-12);
        }
        // Off-diagonal confusion is empty.
        for (i, row) in report.confusion.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(n, 0, "confusion[{i}][{j}]");
                }
            }
        }
    }

    #[test]
    fn predictions_must_reference_manifest_clips_once() {
        let mut entries = Vec::new();
        let mut preds = Vec::new();
        device_block("a", 5, 10, &mut entries, &mut preds);
        let manifest = DatasetManifest::new(entries).unwrap();

        let mut missing = preds.clone();
        missing.push(("ghost.wav".to_string(), "park".to_string()));
        assert!(matches!(
            device_report(&missing, &manifest, &default_device_groups()),
            Err(Error::ScoreMismatch { .. })
        ));

        let mut dup = preds.clone();
        dup.push(preds[0].clone());
        assert!(matches!(
            device_report(&dup, &manifest, &default_device_groups()),
            Err(Error::ScoreMismatch { .. })
        ));

        // Devices outside every group still count toward the overall mean.
        let report = device_report(&preds, &manifest, &Vec::new()).unwrap();
        assert!(report.groups.is_empty());
        assert!((report.overall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_text_carries_a_parseable_key_value_block() {
        let (report, _) = overall_for([70.6, 61.6, 53.3, 44.3]);
        let text = format_report(&report);
        let mut kv = HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if !k.contains(' ') {
                    kv.insert(k.to_string(), v.to_string());
                }
            }
        }
        assert_eq!(kv["clips"], "9000");
        let overall: f64 = kv["overall"].parse().unwrap();
        assert!((overall - 0.540667).abs() < 1e-6);
        let a: f64 = kv["group.A"].parse().unwrap();
        assert!((a - 0.706).abs() < 1e-9);
        assert!(kv.contains_key("device.s4"));
    }
}
