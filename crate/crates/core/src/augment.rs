//! Cross-modality random combination (CMRC): new training videos built from
//! the visual track of one video and the audio track of another.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::labels::write_label_csv;
use crate::data::manifest::VideoEntry;
use crate::data::{io_err, DataError, DatasetManifest, LabelMatrix, VideoRecord, Vocabulary};

/// Multipliers with a published batch size.
pub const MULTIPLIERS: [f64; 5] = [0.25, 0.5, 0.75, 1.0, 2.0];

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("donor {id} is discarded")]
    Discarded { id: String },
    #[error("donor {id} has unannotated pseudo-label rows")]
    Unannotated { id: String },
    #[error("donors disagree on {what}: {visual} vs {audio}")]
    Incompatible {
        what: &'static str,
        visual: usize,
        audio: usize,
    },
    #[error("target of {target} combinations exceeds the {available} distinct eligible pairs")]
    Capacity { target: usize, available: usize },
    #[error("invalid augment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Fraction of the training pool size.
    Multiplier(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub target: Target,
    /// Classes must occur in strictly more videos than this to drive sampling.
    pub min_count: usize,
    pub seed: u64,
    /// Candidate pairs drawn per generated record.
    pub candidates: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target: Target::Multiplier(1.0),
            min_count: 50,
            seed: 0,
            candidates: 16,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Target::Multiplier(m) = self.target {
            if !MULTIPLIERS.contains(&m) {
                return Err(AugmentError::Config(format!(
                    "multiplier must be one of {MULTIPLIERS:?}, got {m}"
                )));
            }
        }
        if self.candidates == 0 {
            return Err(AugmentError::Config("candidates must be positive".into()));
        }
        Ok(())
    }

    /// `round(multiplier * pool)` or the explicit count.
    pub fn target_count(&self, pool: usize) -> usize {
        match self.target {
            Target::Multiplier(m) => (m * pool as f64).round() as usize,
            Target::Count(n) => n,
        }
    }
}

/// Video-level class counts and the classes above the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelDistribution {
    pub counts: Vec<usize>,
    pub threshold: usize,
    pub retained: Vec<usize>,
}

impl LabelDistribution {
    /// Retained counts normalized to sum 1, indexed like `retained`.
    pub fn normalized(&self) -> Vec<f64> {
        normalize(&self.retained.iter().map(|&c| self.counts[c]).collect::<Vec<_>>())
    }

    /// L1 distance between the normalized retained profile of `labels` and
    /// this distribution.
    pub fn l1_distance<'a>(&self, labels: impl IntoIterator<Item = &'a [bool]>) -> f64 {
        let mut hist = vec![0usize; self.retained.len()];
        for l in labels {
            for (k, &c) in self.retained.iter().enumerate() {
                hist[k] += usize::from(l[c]);
            }
        }
        l1(&normalize(&hist), &self.normalized())
    }
}

fn normalize(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&n| n as f64 / total as f64).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, |acc, d| acc + d)
}

/// Counts how many videos carry each class; keeps those with count > `threshold`.
pub fn count_label_distribution(records: &[VideoRecord], classes: usize, threshold: usize) -> LabelDistribution {
    let mut counts = vec![0; classes];
    for r in records {
        for (c, &on) in r.video_label.iter().enumerate() {
            counts[c] += usize::from(on);
        }
    }
    let retained = (0..classes).filter(|&c| counts[c] > threshold).collect();
    LabelDistribution { counts, threshold, retained }
}

fn check_donor(r: &VideoRecord) -> Result<()> {
    if r.discard {
        return Err(AugmentError::Discarded { id: r.video_id.clone() });
    }
    if r.pseudo_a.has_null() || r.pseudo_v.has_null() {
        return Err(AugmentError::Unannotated { id: r.video_id.clone() });
    }
    Ok(())
}

fn union_label(visual: &LabelMatrix, audio: &LabelMatrix) -> Vec<bool> {
    (0..visual.classes())
        .map(|c| visual.column_any(c) || audio.column_any(c))
        .collect()
}

/// Visual track and labels of `visual_donor` with the audio track and labels
/// of `audio_donor`; the video label is the union of both pseudo-label sets.
pub fn cmrc_combine(visual_donor: &VideoRecord, audio_donor: &VideoRecord) -> Result<VideoRecord> {
    check_donor(visual_donor)?;
    check_donor(audio_donor)?;
    for (what, v, a) in [
        ("segments", visual_donor.segments(), audio_donor.segments()),
        ("classes", visual_donor.pseudo_v.classes(), audio_donor.pseudo_a.classes()),
    ] {
        if v != a {
            return Err(AugmentError::Incompatible { what, visual: v, audio: a });
        }
    }
    Ok(VideoRecord {
        video_id: format!("cmrc_{}_{}", visual_donor.video_id, audio_donor.video_id),
        audio: audio_donor.audio.clone(),
        visual: visual_donor.visual.clone(),
        video_label: union_label(&visual_donor.pseudo_v, &audio_donor.pseudo_a),
        pseudo_a: audio_donor.pseudo_a.clone(),
        pseudo_v: visual_donor.pseudo_v.clone(),
        discard: false,
        audio_path: audio_donor.audio_path.clone(),
        visual_path: visual_donor.visual_path.clone(),
    })
}

/// One generated record and the donors it came from.
#[derive(Debug, Clone)]
pub struct Combination {
    pub record: VideoRecord,
    pub visual_donor: String,
    pub audio_donor: String,
}

/// Samples `target` distinct (visual, audio) donor pairs from the eligible
/// pool. Each step draws `candidates` unused pairs and keeps the one whose
/// union label moves the generated class profile closest (L1) to the
/// retained distribution. A video is never paired with itself.
pub fn generate_cmrc_batch(
    records: &[VideoRecord],
    dist: &LabelDistribution,
    config: &AugmentConfig,
    target: usize,
) -> Result<Vec<Combination>> {
    config.validate()?;
    let pool: Vec<&VideoRecord> = records.iter().filter(|r| r.is_cmrc_eligible()).collect();
    let n = pool.len();
    let available = n * n.saturating_sub(1);
    if target > available {
        return Err(AugmentError::Capacity { target, available });
    }
    let labels: Vec<(Vec<usize>, Vec<usize>)> = pool
        .iter()
        .map(|r| {
            let on = |m: &LabelMatrix| -> Vec<usize> {
                dist.retained
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| m.column_any(c))
                    .map(|(k, _)| k)
                    .collect()
            };
            (on(&r.pseudo_v), on(&r.pseudo_a))
        })
        .collect();
    let goal = dist.normalized();
    let mut hist = vec![0usize; goal.len()];
    let mut used: HashSet<(usize, usize)> = HashSet::with_capacity(target);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(target);

    let pair_classes = |v: usize, a: usize| -> Vec<usize> {
        let mut ks: Vec<usize> = labels[v].0.iter().chain(&labels[a].1).copied().collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };

    while out.len() < target {
        let remaining = available - used.len();
        let draws: Vec<(usize, usize)> = if remaining * 4 < available {
            let unused: Vec<(usize, usize)> = (0..n)
                .flat_map(|v| (0..n).map(move |a| (v, a)))
                .filter(|&(v, a)| v != a && !used.contains(&(v, a)))
                .collect();
            (0..config.candidates.min(unused.len()))
                .map(|_| unused[rng.gen_range(0..unused.len())])
                .collect()
        } else {
            let mut d = Vec::with_capacity(config.candidates);
            while d.len() < config.candidates {
                let v = rng.gen_range(0..n);
                let a = rng.gen_range(0..n);
                if v != a && !used.contains(&(v, a)) {
                    d.push((v, a));
                }
            }
            d
        };
        let mut best = draws[0];
        let mut best_score = f64::INFINITY;
        for &(v, a) in &draws {
            let mut trial = hist.clone();
            for k in pair_classes(v, a) {
                trial[k] += 1;
            }
            let score = l1(&normalize(&trial), &goal);
            if score < best_score {
                best_score = score;
                best = (v, a);
            }
        }
        used.insert(best);
        for k in pair_classes(best.0, best.1) {
            hist[k] += 1;
        }
        let (v, a) = best;
        out.push(Combination {
            record: cmrc_combine(pool[v], pool[a])?,
            visual_donor: pool[v].video_id.clone(),
            audio_donor: pool[a].video_id.clone(),
        });
    }
    Ok(out)
}

/// Files written by [`write_cmrc_batch`].
#[derive(Debug, Clone)]
pub struct BatchFiles {
    pub manifest: PathBuf,
    pub pseudo_labels: PathBuf,
    pub provenance: PathBuf,
}

/// Writes `cmrc.toml`, `cmrc_pseudo.csv` and `cmrc_provenance.csv` into
/// `out`. Feature paths point at the donors' files (absolute); no feature
/// data is copied.
pub fn write_cmrc_batch(
    out: &Path,
    batch: &[Combination],
    vocab: &Vocabulary,
    segments: usize,
) -> Result<BatchFiles> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let files = BatchFiles {
        manifest: out.join("cmrc.toml"),
        pseudo_labels: out.join("cmrc_pseudo.csv"),
        provenance: out.join("cmrc_provenance.csv"),
    };
    let mut manifest = DatasetManifest::new("cmrc", segments, vocab);
    manifest.pseudo_labels = Some("cmrc_pseudo.csv".into());
    for c in batch {
        let r = &c.record;
        let path_of = |p: &Option<PathBuf>, side: &str| -> Result<String> {
            let p = p.as_ref().ok_or_else(|| {
                AugmentError::Config(format!("{}: {side} donor has no feature file", r.video_id))
            })?;
            let abs = fs::canonicalize(p).map_err(io_err(p))?;
            Ok(abs.to_string_lossy().into_owned())
        };
        manifest.videos.push(VideoEntry {
            id: r.video_id.clone(),
            audio: path_of(&r.audio_path, "audio")?,
            visual: path_of(&r.visual_path, "visual")?,
            labels: r.label_classes().iter().map(|&k| vocab.name(k).to_string()).collect(),
        });
    }
    manifest.write(&files.manifest)?;
    write_label_csv(
        &files.pseudo_labels,
        vocab,
        batch
            .iter()
            .map(|c| (c.record.video_id.as_str(), &c.record.pseudo_a, &c.record.pseudo_v)),
    )?;
    let mut w = csv::Writer::from_path(&files.provenance).map_err(|e| csv_err(&files.provenance, e))?;
    let prov_err = |e| csv_err(&files.provenance, e);
    w.write_record(["new_id", "visual_donor", "audio_donor"]).map_err(prov_err)?;
    for c in batch {
        w.write_record([c.record.video_id.as_str(), &c.visual_donor, &c.audio_donor])
            .map_err(prov_err)?;
    }
    w.flush().map_err(io_err(&files.provenance))?;
    Ok(files)
}

fn csv_err(path: &Path, e: csv::Error) -> AugmentError {
    AugmentError::Data(DataError::Format {
        path: path.to_path_buf(),
        field: "csv",
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests;
