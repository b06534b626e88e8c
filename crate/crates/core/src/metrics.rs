//! Segment- and event-level F-scores for audio-visual video parsing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::data::labels::{parse_pseudo_labels, write_label_csv};
use crate::data::{DataError, GroundTruth, LabelMatrix, Vocabulary};
use crate::model::ModelOutputs;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("no ground truth for video {0:?}")]
    MissingGroundTruth(String),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Binary per-segment predictions of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPrediction {
    pub video_id: String,
    pub pred_a: LabelMatrix,
    pub pred_v: LabelMatrix,
}

impl SegmentPrediction {
    pub fn pred_av(&self) -> LabelMatrix {
        self.pred_a.and(&self.pred_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventModality {
    A,
    V,
    Av,
}

/// Half-open run `[start, end)` of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventInterval {
    pub class: usize,
    pub modality: EventModality,
    pub start: usize,
    pub end: usize,
}

impl EventInterval {
    pub fn iou(&self, other: &EventInterval) -> f64 {
        let inter = self.end.min(other.end).saturating_sub(self.start.max(other.start));
        let union = self.end.max(other.end) - self.start.min(other.start);
        inter as f64 / union as f64
    }
}

/// The five scores at one granularity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub a: f64,
    pub v: f64,
    pub av: f64,
    pub type_av: f64,
    pub event_av: f64,
}

impl Scores {
    fn values(&self) -> [f64; 5] {
        [self.a, self.v, self.av, self.type_av, self.event_av]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub segment: Scores,
    pub event: Scores,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 10] = [
        "seg_a",
        "seg_v",
        "seg_av",
        "seg_type_av",
        "seg_event_av",
        "event_a",
        "event_v",
        "event_av",
        "event_type_av",
        "event_event_av",
    ];

    pub fn values(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        out[..5].copy_from_slice(&self.segment.values());
        out[5..].copy_from_slice(&self.event.values());
        out
    }

    pub fn csv_header() -> String {
        Self::COLUMNS.join(",")
    }

    /// Full precision, round-trippable.
    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>7} {:>7} {:>7} {:>8} {:>9}", "level", "A", "V", "AV", "Type@AV", "Event@AV")?;
        for (name, s) in [("segment", &self.segment), ("event", &self.event)] {
            write!(f, "{name:<8}")?;
            for (v, w) in s.values().iter().zip([7, 7, 7, 8, 9]) {
                write!(f, " {:>w$.2}", 100.0 * v)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// `pred_m[t,c] = seg_prob_m[t,c] > theta_seg && video_prob[c] > theta_vid`.
pub fn binarize(video_id: &str, outputs: &ModelOutputs, theta_seg: f64, theta_vid: f64) -> Result<SegmentPrediction> {
    binarize_probs(
        video_id,
        &outputs.seg_prob_a,
        &outputs.seg_prob_v,
        &outputs.video_prob,
        theta_seg,
        theta_vid,
    )
}

/// [`binarize`] on bare probability tensors: `[T, C]`, `[T, C]`, `[C]`.
pub fn binarize_probs(
    video_id: &str,
    seg_a: &Tensor,
    seg_v: &Tensor,
    video_prob: &Tensor,
    theta_seg: f64,
    theta_vid: f64,
) -> Result<SegmentPrediction> {
    for th in [theta_seg, theta_vid] {
        if !(th > 0.0 && th < 1.0) {
            return Err(MetricsError::Threshold(th));
        }
    }
    let video = video_prob.data();
    let gate = |prob: &Tensor| {
        let (t_len, c) = (prob.shape()[0], prob.shape()[1]);
        let p = prob.data();
        let mut m = LabelMatrix::zeros(t_len, c);
        for t in 0..t_len {
            for k in 0..c {
                m.set(t, k, p[t * c + k] > theta_seg && video[k] > theta_vid);
            }
        }
        m
    };
    Ok(SegmentPrediction {
        video_id: video_id.to_string(),
        pred_a: gate(seg_a),
        pred_v: gate(seg_v),
    })
}

fn f_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
}

/// `2TP / (2TP + FP + FN)` over all cells; 1 when both are empty.
pub fn segment_f1(pred: &LabelMatrix, gt: &LabelMatrix) -> Result<f64> {
    let dims = |m: &LabelMatrix| (m.segments(), m.classes());
    if dims(pred) != dims(gt) {
        return Err(MetricsError::ShapeMismatch { pred: dims(pred), gt: dims(gt) });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for t in 0..pred.segments() {
        for c in 0..pred.classes() {
            match (pred.get(t, c), gt.get(t, c)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(f_score(tp, fp, fn_))
}

/// Maximal runs of `true` in `seq`.
pub fn extract_events(seq: &[bool], class: usize, modality: EventModality) -> Vec<EventInterval> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &on) in seq.iter().chain(std::iter::once(&false)).enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push(EventInterval { class, modality, start: s, end: t });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Events of every class of a label matrix.
pub fn matrix_events(m: &LabelMatrix, modality: EventModality) -> Vec<EventInterval> {
    (0..m.classes())
        .flat_map(|c| {
            let seq: Vec<bool> = (0..m.segments()).map(|t| m.get(t, c)).collect();
            extract_events(&seq, c, modality)
        })
        .collect()
}

/// Greedy one-to-one matching within (class, modality), highest IoU first;
/// ties go to the earlier ground-truth start, then the earlier prediction
/// start. `F = 2 matches / (|pred| + |gt|)`, 1 when both are empty.
pub fn event_f1(pred: &[EventInterval], gt: &[EventInterval], iou_threshold: f64) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.class == g.class && p.modality == g.modality {
                let iou = p.iou(g);
                if iou >= iou_threshold {
                    pairs.push((iou, i, j));
                }
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(gt[x.2].start.cmp(&gt[y.2].start))
            .then(pred[x.1].start.cmp(&pred[y.1].start))
            .then(x.2.cmp(&y.2))
            .then(x.1.cmp(&y.1))
    });
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut matches = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            matches += 1;
        }
    }
    (2 * matches) as f64 / (pred.len() + gt.len()) as f64
}

/// All ten scores of one video.
pub fn video_report(pred: &SegmentPrediction, gt: &GroundTruth) -> Result<MetricReport> {
    let (pa, pv, pav) = (&pred.pred_a, &pred.pred_v, pred.pred_av());
    let (ga, gv, gav) = (&gt.audio, &gt.visual, gt.audio.and(&gt.visual));

    let mut segment = Scores {
        a: segment_f1(pa, ga)?,
        v: segment_f1(pv, gv)?,
        av: segment_f1(&pav, &gav)?,
        type_av: 0.0,
        event_av: segment_f1(&pa.or(pv), &ga.or(gv))?,
    };
    segment.type_av = (segment.a + segment.v + segment.av) / 3.0;

    let ev = |m: &LabelMatrix, tag| matrix_events(m, tag);
    let (ea, eb) = (ev(pa, EventModality::A), ev(ga, EventModality::A));
    let (va, vb) = (ev(pv, EventModality::V), ev(gv, EventModality::V));
    let pooled_p: Vec<_> = ea.iter().chain(&va).copied().collect();
    let pooled_g: Vec<_> = eb.iter().chain(&vb).copied().collect();
    let mut event = Scores {
        a: event_f1(&ea, &eb, DEFAULT_IOU),
        v: event_f1(&va, &vb, DEFAULT_IOU),
        av: event_f1(&ev(&pav, EventModality::Av), &ev(&gav, EventModality::Av), DEFAULT_IOU),
        type_av: 0.0,
        event_av: event_f1(&pooled_p, &pooled_g, DEFAULT_IOU),
    };
    event.type_av = (event.a + event.v + event.av) / 3.0;
    Ok(MetricReport { segment, event })
}

/// Per-video reports averaged over `preds`, folded in the given order.
pub fn aggregate_report(preds: &[SegmentPrediction], gt: &BTreeMap<String, GroundTruth>) -> Result<MetricReport> {
    let reports: Vec<MetricReport> = preds
        .par_iter()
        .map(|p| {
            let g = gt
                .get(&p.video_id)
                .ok_or_else(|| MetricsError::MissingGroundTruth(p.video_id.clone()))?;
            video_report(p, g)
        })
        .collect::<Result<_>>()?;
    let n = reports.len().max(1) as f64;
    let mut sum = [0.0; 10];
    for r in &reports {
        for (s, v) in sum.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    let m = sum.map(|s| s / n);
    let mut report = MetricReport {
        segment: Scores { a: m[0], v: m[1], av: m[2], type_av: 0.0, event_av: m[4] },
        event: Scores { a: m[5], v: m[6], av: m[7], type_av: 0.0, event_av: m[9] },
    };
    report.segment.type_av = (report.segment.a + report.segment.v + report.segment.av) / 3.0;
    report.event.type_av = (report.event.a + report.event.v + report.event.av) / 3.0;
    Ok(report)
}

/// Writes predictions in the label CSV schema.
pub fn write_prediction_dump(path: &Path, vocab: &Vocabulary, preds: &[SegmentPrediction]) -> Result<()> {
    write_label_csv(
        path,
        vocab,
        preds.iter().map(|p| (p.video_id.as_str(), &p.pred_a, &p.pred_v)),
    )?;
    Ok(())
}

/// Reads a label CSV as per-video matrices. Unannotated rows count as empty.
pub fn read_label_dump(path: &Path, vocab: &Vocabulary, segments: usize) -> Result<BTreeMap<String, GroundTruth>> {
    let table = parse_pseudo_labels(path, vocab, segments)?;
    Ok(table
        .into_iter()
        .map(|(id, mut p)| {
            for m in [&mut p.audio, &mut p.visual] {
                for t in 0..segments {
                    m.clear_null(t);
                }
            }
            (id, GroundTruth { audio: p.audio, visual: p.visual })
        })
        .collect())
}

/// Scores a prediction dump against ground truth. `videos` lists the videos
/// to evaluate; `None` means every id present in either table. Videos absent
/// from a table have no events in it.
pub fn evaluate_dumps(
    pred: &BTreeMap<String, GroundTruth>,
    gt: &BTreeMap<String, GroundTruth>,
    videos: Option<&[String]>,
    segments: usize,
    classes: usize,
) -> Result<MetricReport> {
    let ids: Vec<String> = match videos {
        Some(v) => v.to_vec(),
        None => pred.keys().chain(gt.keys()).cloned().collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let empty = GroundTruth {
        audio: LabelMatrix::zeros(segments, classes),
        visual: LabelMatrix::zeros(segments, classes),
    };
    let preds: Vec<SegmentPrediction> = ids
        .iter()
        .map(|id| {
            let p = pred.get(id).unwrap_or(&empty);
            SegmentPrediction {
                video_id: id.clone(),
                pred_a: p.audio.clone(),
                pred_v: p.visual.clone(),
            }
        })
        .collect();
    let full: BTreeMap<String, GroundTruth> = ids
        .iter()
        .map(|id| (id.clone(), gt.get(id).unwrap_or(&empty).clone()))
        .collect();
    aggregate_report(&preds, &full)
}
