//! Dataset manifests.
//!
//! A manifest is a comma-separated text file with header
//! `path,scene,device,split` (plus an optional `source_transform` column on
//! augmentation manifests) listing every clip in a corpus. Scene labels are
//! closed over the ten-class set in [`SCENES`]; paths must be unique. Lines
//! starting with `#` are preserved as comments so tools can stash metadata
//! such as a configuration fingerprint.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::Error;
use crate::Result;

/// The ten fine scene classes, in canonical order. Class indices used for
/// labels, score tables, and confusion matrices all refer to this order.
pub const SCENES: [&str; 10] = [
    "airport",
    "shopping_mall",
    "metro_station",
    "street_pedestrian",
    "public_square",
    "street_traffic",
    "tram",
    "bus",
    "metro",
    "park",
];

/// Index of a scene in [`SCENES`], if it is a known label.
pub fn scene_index(scene: &str) -> Option<usize> {
    SCENES.iter().position(|&s| s == scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub scene: String,
    pub device: String,
    pub split: Split,
    /// Set on augmentation manifests: the transform that produced this clip.
    pub source_transform: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// `#`-prefixed lines found before the header, without the `#`.
    pub comments: Vec<String>,
    /// Directory relative clip paths resolve against (the manifest's parent
    /// directory after a load; `None` for in-memory manifests).
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest {
            entries,
            comments: Vec::new(),
            base_dir: None,
        };
        m.validate("<memory>")?;
        Ok(m)
    }

    /// Absolute location of a clip, resolving relative paths against the
    /// manifest's own directory.
    pub fn clip_path(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else if let Some(base) = &self.base_dir {
            base.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Sorted, de-duplicated device ids present in the manifest.
    pub fn devices(&self) -> Vec<String> {
        let mut d: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.device.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        d.sort();
        d
    }

    fn validate(&self, path: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if scene_index(&e.scene).is_none() {
                return Err(Error::UnknownScene {
                    path: path.into(),
                    line: 0,
                    label: e.scene.clone(),
                });
            }
            if e.device.is_empty() {
                return Err(Error::config(format!("empty device id for {}", e.path)));
            }
            if !seen.insert(e.path.as_str()) {
                return Err(Error::DuplicateClip {
                    path: path.into(),
                    clip: e.path.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let path_str = path.display().to_string();
        let mut entries = Vec::new();
        let mut comments = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut header_seen = false;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                comments.push(comment.trim().to_string());
                continue;
            }
            if !header_seen {
                header_seen = true;
                if !line.starts_with("path,scene,device,split") {
                    return Err(Error::ManifestColumns {
                        path: path_str,
                        line: line_no,
                        expected: 4,
                        found: line.split(',').count(),
                    });
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 4 {
                return Err(Error::ManifestColumns {
                    path: path_str,
                    line: line_no,
                    expected: 4,
                    found: cols.len(),
                });
            }
            let (clip, scene, device, split_str) = (cols[0], cols[1], cols[2], cols[3]);
            if scene_index(scene).is_none() {
                return Err(Error::UnknownScene {
                    path: path_str,
                    line: line_no,
                    label: scene.into(),
                });
            }
            let split = Split::from_str(split_str).map_err(|_| Error::UnknownSplit {
                path: path_str.clone(),
                line: line_no,
                split: split_str.into(),
            })?;
            if !seen.insert(clip.to_string()) {
                return Err(Error::DuplicateClip {
                    path: path_str,
                    clip: clip.into(),
                });
            }
            entries.push(ManifestEntry {
                path: clip.into(),
                scene: scene.into(),
                device: device.into(),
                split,
                source_transform: cols.get(4).filter(|s| !s.is_empty()).map(|s| s.to_string()),
            });
        }

        Ok(DatasetManifest {
            entries,
            comments,
            base_dir: path.parent().map(Path::to_path_buf),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let with_transform = self.entries.iter().any(|e| e.source_transform.is_some());
        if with_transform {
            out.push_str("path,scene,device,split,source_transform\n");
        } else {
            out.push_str("path,scene,device,split\n");
        }
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}", e.path, e.scene, e.device, e.split));
            if with_transform {
                out.push(',');
                if let Some(t) = &e.source_transform {
                    out.push_str(t);
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
