//! Per-segment label CSVs and annotation patches.
//!
//! Schema (header required): `video_id,modality,segment,labels`, with
//! `modality` in `a|v`, 0-based `segment`, and `labels` a `;`-joined list of
//! class names. An empty `labels` field marks the segment unannotated.
//! Segments without a row are annotated as containing no event.
//!
//! Pseudo-labels, ground truth, prediction dumps and patches all use it; in a
//! patch the `labels` field may also be `DISCARD`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{io_err, DataError, LabelMatrix, Result, VideoRecord, Vocabulary};
use crate::ssm::Modality;

pub const HEADER: [&str; 4] = ["video_id", "modality", "segment", "labels"];
pub const DISCARD: &str = "DISCARD";

/// Audio and visual label matrices of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    pub audio: LabelMatrix,
    pub visual: LabelMatrix,
}

impl PseudoLabels {
    pub fn empty(segments: usize, classes: usize) -> Self {
        Self {
            audio: LabelMatrix::zeros(segments, classes),
            visual: LabelMatrix::zeros(segments, classes),
        }
    }

    pub fn get(&self, m: Modality) -> &LabelMatrix {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut LabelMatrix {
        match m {
            Modality::Audio => &mut self.audio,
            Modality::Visual => &mut self.visual,
        }
    }
}

pub type LabelTable = BTreeMap<String, PseudoLabels>;

/// One parsed data row.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Row {
    line: u64,
    video_id: String,
    modality: Modality,
    segment: usize,
    labels: String,
}

fn read_rows(path: &Path, segments: usize) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {:?}", HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let perr = |message: String| DataError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let modality = match &record[1] {
            "a" => Modality::Audio,
            "v" => Modality::Visual,
            other => return Err(perr(format!("modality must be a or v, got {other:?}"))),
        };
        let segment: usize = record[2]
            .parse()
            .map_err(|_| perr(format!("segment {:?} is not a non-negative integer", &record[2])))?;
        if segment >= segments {
            return Err(perr(format!("segment {segment} out of range for T={segments}")));
        }
        rows.push(Row {
            line,
            video_id: record[0].to_string(),
            modality,
            segment,
            labels: record[3].to_string(),
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => DataError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_classes(labels: &str, vocab: &Vocabulary) -> std::result::Result<Vec<usize>, String> {
    labels
        .split(';')
        .map(|name| vocab.lookup(name.trim()).map_err(|_| format!("unknown category {name:?}")))
        .collect()
}

/// Parses a label CSV into per-video matrices.
pub fn parse_pseudo_labels(path: &Path, vocab: &Vocabulary, segments: usize) -> Result<LabelTable> {
    let mut table = LabelTable::new();
    let mut seen = std::collections::HashSet::new();
    for row in read_rows(path, segments)? {
        let perr = |message: String| DataError::Parse {
            path: path.to_path_buf(),
            line: row.line,
            message,
        };
        if !seen.insert((row.video_id.clone(), row.modality, row.segment)) {
            return Err(perr(format!(
                "duplicate row for ({}, {}, {})",
                row.video_id,
                row.modality.tag(),
                row.segment
            )));
        }
        let entry = table
            .entry(row.video_id.clone())
            .or_insert_with(|| PseudoLabels::empty(segments, vocab.len()));
        let m = entry.get_mut(row.modality);
        if row.labels.is_empty() {
            m.set_null(row.segment);
        } else {
            for c in parse_classes(&row.labels, vocab).map_err(perr)? {
                m.set(row.segment, c, true);
            }
        }
    }
    Ok(table)
}

/// Writes matrices in the label CSV schema: one row per non-empty or
/// unannotated segment, in table order, audio before visual.
pub fn write_label_csv<'a, I>(path: &Path, vocab: &Vocabulary, videos: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a LabelMatrix, &'a LabelMatrix)>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_error(path, e))?;
    for (id, audio, visual) in videos {
        for (m, mat) in [(Modality::Audio, audio), (Modality::Visual, visual)] {
            for t in 0..mat.segments() {
                let classes = mat.classes_at(t);
                if classes.is_empty() && !mat.is_null(t) {
                    continue;
                }
                let joined = classes.iter().map(|&c| vocab.name(c)).collect::<Vec<_>>().join(";");
                w.write_record([id, m.tag(), &t.to_string(), &joined])
                    .map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

/// Outcome of applying a patch file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatchSummary {
    pub labeled_rows: usize,
    pub discarded_videos: usize,
}

/// Fills unannotated rows from a patch CSV; `DISCARD` flags the whole
/// video. Records are modified in place only if the whole patch is valid.
pub fn apply_annotation_patch(
    records: &mut [VideoRecord],
    path: &Path,
    vocab: &Vocabulary,
) -> Result<PatchSummary> {
    let segments = records.first().map_or(usize::MAX, VideoRecord::segments);
    let rows = read_rows(path, segments)?;
    let index: BTreeMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.video_id.as_str(), i))
        .collect();

    enum Action {
        Label(usize, Modality, usize, Vec<usize>),
        Discard(usize),
    }
    let mut actions = Vec::with_capacity(rows.len());
    let mut seen = std::collections::HashSet::new();
    for row in &rows {
        let perr = |message: String| DataError::Patch {
            path: path.to_path_buf(),
            line: row.line,
            message,
        };
        let &i = index
            .get(row.video_id.as_str())
            .ok_or_else(|| perr(format!("unknown video id {:?}", row.video_id)))?;
        if row.labels == DISCARD {
            actions.push(Action::Discard(i));
            continue;
        }
        let rec = &records[i];
        let mat = match row.modality {
            Modality::Audio => &rec.pseudo_a,
            Modality::Visual => &rec.pseudo_v,
        };
        if !mat.is_null(row.segment) {
            return Err(perr(format!(
                "({}, {}, {}) is already annotated",
                row.video_id,
                row.modality.tag(),
                row.segment
            )));
        }
        if !seen.insert((i, row.modality, row.segment)) {
            return Err(perr("duplicate patch row".into()));
        }
        if row.labels.is_empty() {
            return Err(perr("patch rows need labels or DISCARD".into()));
        }
        let classes = parse_classes(&row.labels, vocab).map_err(perr)?;
        actions.push(Action::Label(i, row.modality, row.segment, classes));
    }

    let mut summary = PatchSummary::default();
    for action in actions {
        match action {
            Action::Label(i, m, t, classes) => {
                let mat = match m {
                    Modality::Audio => &mut records[i].pseudo_a,
                    Modality::Visual => &mut records[i].pseudo_v,
                };
                mat.clear_null(t);
                for c in classes {
                    mat.set(t, c, true);
                }
                summary.labeled_rows += 1;
            }
            Action::Discard(i) => {
                if !records[i].discard {
                    summary.discarded_videos += 1;
                }
                records[i].discard = true;
            }
        }
    }
    Ok(summary)
}
