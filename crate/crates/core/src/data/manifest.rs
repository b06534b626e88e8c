//! TOML dataset manifest and split loading.
//!
//! ```toml
//! format = "mug-manifest"
//! version = 1
//! split = "train"
//! segments = 10
//! classes = ["Speech", "Car"]
//! pseudo_labels = "labels/train_pseudo.csv"    # optional
//! ground_truth = "labels/train_truth.csv"      # optional
//! annotation_patch = "labels/train_patch.csv"  # optional
//!
//! [[videos]]
//! id = "train00000"
//! audio = "features/train00000_a.avmf"
//! visual = "features/train00000_v.avmf"
//! labels = ["Speech"]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::{apply_annotation_patch, parse_pseudo_labels, PatchSummary, PseudoLabels};
use super::{io_err, read_feature_file, DataError, GroundTruth, Result, VideoRecord, Vocabulary};

pub const FORMAT: &str = "mug-manifest";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub audio: String,
    pub visual: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub segments: usize,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_patch: Option<String>,
    #[serde(default)]
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn new(split: &str, segments: usize, vocab: &Vocabulary) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            split: split.into(),
            segments,
            classes: vocab.names().to_vec(),
            pseudo_labels: None,
            ground_truth: None,
            annotation_patch: None,
            videos: Vec::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let m: Self = toml::from_str(&text).map_err(|e| DataError::Format {
            path: path.to_path_buf(),
            field: "manifest",
            message: e.to_string(),
        })?;
        m.validate(path)?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| DataError::Config(e.to_string()))?;
        fs::write(path, text).map_err(io_err(path))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let fmt = |field: &'static str, message: String| DataError::Format {
            path: path.to_path_buf(),
            field,
            message,
        };
        if self.format != FORMAT {
            return Err(fmt("format", format!("expected {FORMAT:?}, got {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(fmt("version", format!("unsupported version {}", self.version)));
        }
        if self.segments == 0 {
            return Err(fmt("segments", "must be positive".into()));
        }
        let vocab = self.vocabulary().map_err(|e| fmt("classes", e.to_string()))?;
        if vocab.is_empty() {
            return Err(fmt("classes", "empty vocabulary".into()));
        }
        let mut ids = HashSet::new();
        for v in &self.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(fmt("videos", format!("duplicate id {:?}", v.id)));
            }
            for l in &v.labels {
                vocab.lookup(l).map_err(|e| fmt("videos", format!("{}: {e}", v.id)))?;
            }
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.classes.clone())
    }
}

/// Resolves `rel` against `base` unless it is absolute.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A loaded split: records in manifest order plus optional ground truth.
#[derive(Debug, Clone)]
pub struct Split {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
    pub vocab: Vocabulary,
    pub records: Vec<VideoRecord>,
    pub ground_truth: Option<BTreeMap<String, GroundTruth>>,
    pub patch: Option<PatchSummary>,
}

impl Split {
    pub fn segments(&self) -> usize {
        self.manifest.segments
    }

    pub fn feature_dims(&self) -> Option<(usize, usize)> {
        self.records
            .first()
            .map(|r| (r.audio.shape()[1], r.visual.shape()[1]))
    }
}

/// Reads a manifest, its feature files, labels and patch.
pub fn load_split(path: &Path) -> Result<Split> {
    let manifest = DatasetManifest::read(path)?;
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let vocab = manifest.vocabulary()?;
    let t = manifest.segments;
    let c = vocab.len();

    let pseudo = match &manifest.pseudo_labels {
        Some(p) => parse_pseudo_labels(&resolve(&dir, p), &vocab, t)?,
        None => BTreeMap::new(),
    };

    let features: Vec<_> = manifest
        .videos
        .par_iter()
        .map(|v| {
            let ap = resolve(&dir, &v.audio);
            let vp = resolve(&dir, &v.visual);
            Ok((read_feature_file(&ap)?, read_feature_file(&vp)?, ap, vp))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(manifest.videos.len());
    let mut dims: Option<(usize, usize)> = None;
    for (v, (audio, visual, ap, vp)) in manifest.videos.iter().zip(features) {
        for (p, x) in [(&ap, &audio), (&vp, &visual)] {
            if x.shape()[0] != t {
                return Err(DataError::Format {
                    path: p.clone(),
                    field: "T",
                    message: format!("expected {t} segments, found {}", x.shape()[0]),
                });
            }
        }
        let d = (audio.shape()[1], visual.shape()[1]);
        if *dims.get_or_insert(d) != d {
            return Err(DataError::Format {
                path: ap,
                field: "D",
                message: format!("feature widths {d:?} differ from {:?}", dims.unwrap()),
            });
        }
        let mut video_label = vec![false; c];
        for l in &v.labels {
            video_label[vocab.lookup(l)?] = true;
        }
        let labels = pseudo.get(&v.id).cloned().unwrap_or_else(|| PseudoLabels::empty(t, c));
        records.push(VideoRecord {
            video_id: v.id.clone(),
            audio,
            visual,
            video_label,
            pseudo_a: labels.audio,
            pseudo_v: labels.visual,
            discard: false,
            audio_path: Some(ap),
            visual_path: Some(vp),
        });
    }

    let patch = match &manifest.annotation_patch {
        Some(p) => Some(apply_annotation_patch(&mut records, &resolve(&dir, p), &vocab)?),
        None => None,
    };

    let ground_truth = match &manifest.ground_truth {
        Some(p) => {
            let table = parse_pseudo_labels(&resolve(&dir, p), &vocab, t)?;
            let gt = records
                .iter()
                .map(|r| {
                    let l = table.get(&r.video_id).cloned().unwrap_or_else(|| PseudoLabels::empty(t, c));
                    (
                        r.video_id.clone(),
                        GroundTruth {
                            audio: l.audio,
                            visual: l.visual,
                        },
                    )
                })
                .collect();
            Some(gt)
        }
        None => None,
    };

    Ok(Split {
        manifest,
        dir,
        vocab,
        records,
        ground_truth,
        patch,
    })
}
