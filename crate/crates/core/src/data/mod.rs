//! Dataset ingestion: feature files, label CSVs, annotation patches,
//! manifests and the synthetic generator.

pub mod features;
pub mod labels;
pub mod manifest;
pub mod synth;

use std::collections::HashMap;
use std::path::PathBuf;

use crate::tensor::{Tensor, TensorError};

pub use features::{read_feature_file, write_feature_file};
pub use labels::{apply_annotation_patch, parse_pseudo_labels, PseudoLabels};
pub use manifest::{load_split, DatasetManifest, Split};
pub use synth::{generate_synthetic_dataset, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: format error in {field}: {message}")]
    Format {
        path: PathBuf,
        field: &'static str,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("patch {path}:{line}: {message}")]
    Patch { path: PathBuf, line: u64, message: String },
    #[error("unknown category {0:?}")]
    Vocabulary(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

/// The 25 event categories of the LLP benchmark, in its canonical order.
pub const LLP_CLASSES: [&str; 25] = [
    "Speech",
    "Car",
    "Cheering",
    "Dog",
    "Cat",
    "Frying_(food)",
    "Basketball_bounce",
    "Fire_alarm",
    "Chainsaw",
    "Cello",
    "Banjo",
    "Singing",
    "Chicken_rooster",
    "Violin_fiddle",
    "Vacuum_cleaner",
    "Baby_laughter",
    "Accordion",
    "Lawn_mower",
    "Motorcycle",
    "Helicopter",
    "Acoustic_guitar",
    "Telephone_bell_ringing",
    "Baby_cry_infant_cry",
    "Blender",
    "Clapping",
];

/// Ordered class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(';') || n.contains(',') {
                return Err(DataError::Config(format!("invalid class name {n:?}")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(DataError::Config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// First `c` LLP names, then `class_25`, `class_26`, ... beyond that.
    pub fn llp(c: usize) -> Self {
        let names = (0..c)
            .map(|i| LLP_CLASSES.get(i).map_or_else(|| format!("class_{i}"), |s| s.to_string()))
            .collect();
        Self::new(names).expect("generated names are valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn lookup(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| DataError::Vocabulary(name.to_string()))
    }
}

/// Binary `T x C` segment labels with a per-segment "unannotated" flag.
/// Flagged rows are always all-zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMatrix {
    segments: usize,
    classes: usize,
    bits: Vec<bool>,
    null: Vec<bool>,
}

impl LabelMatrix {
    pub fn zeros(segments: usize, classes: usize) -> Self {
        Self {
            segments,
            classes,
            bits: vec![false; segments * classes],
            null: vec![false; segments],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let classes = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), classes);
        for (t, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), classes);
            for (c, &b) in r.iter().enumerate() {
                m.set(t, c, b);
            }
        }
        m
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.bits[t * self.classes + c]
    }

    pub fn set(&mut self, t: usize, c: usize, on: bool) {
        self.bits[t * self.classes + c] = on;
    }

    pub fn is_null(&self, t: usize) -> bool {
        self.null[t]
    }

    /// Marks segment `t` unannotated and clears its labels.
    pub fn set_null(&mut self, t: usize) {
        self.null[t] = true;
        for c in 0..self.classes {
            self.set(t, c, false);
        }
    }

    pub fn clear_null(&mut self, t: usize) {
        self.null[t] = false;
    }

    pub fn null_count(&self) -> usize {
        self.null.iter().filter(|n| **n).count()
    }

    pub fn has_null(&self) -> bool {
        self.null.iter().any(|n| *n)
    }

    pub fn classes_at(&self, t: usize) -> Vec<usize> {
        (0..self.classes).filter(|&c| self.get(t, c)).collect()
    }

    pub fn row_is_empty(&self, t: usize) -> bool {
        (0..self.classes).all(|c| !self.get(t, c))
    }

    /// Whether class `c` is on in any segment.
    pub fn column_any(&self, c: usize) -> bool {
        (0..self.segments).any(|t| self.get(t, c))
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn zip_with(&self, other: &LabelMatrix, f: impl Fn(bool, bool) -> bool) -> LabelMatrix {
        assert_eq!((self.segments, self.classes), (other.segments, other.classes));
        LabelMatrix {
            segments: self.segments,
            classes: self.classes,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| f(*a, *b)).collect(),
            null: vec![false; self.segments],
        }
    }

    pub fn and(&self, other: &LabelMatrix) -> LabelMatrix {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &LabelMatrix) -> LabelMatrix {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn to_tensor(&self) -> Tensor {
        let v = self.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(v, &[self.segments, self.classes]).expect("label matrix has positive dims")
    }

    /// 1.0 for annotated segments, 0.0 for null ones, broadcastable as `[T, 1]`.
    pub fn annotated_mask(&self) -> Tensor {
        let v = self.null.iter().map(|n| if *n { 0.0 } else { 1.0 }).collect();
        Tensor::from_vec(v, &[self.segments, 1]).expect("label matrix has positive dims")
    }
}

/// One video: features, weak label and per-modality pseudo-labels.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub video_id: String,
    pub audio: Tensor,
    pub visual: Tensor,
    pub video_label: Vec<bool>,
    pub pseudo_a: LabelMatrix,
    pub pseudo_v: LabelMatrix,
    pub discard: bool,
    pub audio_path: Option<PathBuf>,
    pub visual_path: Option<PathBuf>,
}

impl VideoRecord {
    pub fn segments(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn video_label_tensor(&self) -> Tensor {
        let v = self.video_label.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(v, &[self.video_label.len()]).expect("at least one class")
    }

    pub fn label_classes(&self) -> Vec<usize> {
        (0..self.video_label.len()).filter(|&c| self.video_label[c]).collect()
    }

    /// Not discarded and no unannotated pseudo-label rows left.
    pub fn is_cmrc_eligible(&self) -> bool {
        !self.discard && !self.pseudo_a.has_null() && !self.pseudo_v.has_null()
    }
}

/// Per-segment ground truth for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub audio: LabelMatrix,
    pub visual: LabelMatrix,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_lookup_and_errors() {
        let v = Vocabulary::llp(25);
        assert_eq!(v.lookup("Speech").unwrap(), 0);
        assert_eq!(v.lookup("Clapping").unwrap(), 24);
        assert!(matches!(v.lookup("Kazoo"), Err(DataError::Vocabulary(_))));
        assert_eq!(Vocabulary::llp(27).name(26), "class_26");
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn null_rows_are_zero() {
        let mut m = LabelMatrix::zeros(3, 2);
        m.set(1, 0, true);
        m.set_null(1);
        assert!(m.row_is_empty(1));
        assert_eq!(m.null_count(), 1);
        assert_eq!(m.annotated_mask().to_vec(), vec![1.0, 0.0, 1.0]);
    }
}
