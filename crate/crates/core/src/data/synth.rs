//! Synthetic dataset with planted audio and visual events.
//!
//! Each class owns a fixed random unit direction per modality; a segment's
//! feature is the sum of the directions of the events active in it plus
//! Gaussian noise. Events are contiguous segment intervals.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::labels::write_label_csv;
use super::manifest::{DatasetManifest, VideoEntry};
use super::{io_err, write_feature_file, DataError, LabelMatrix, Result, Vocabulary};
use crate::tensor::params::stable_hash;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Training videos.
    pub videos: usize,
    pub val_videos: usize,
    pub test_videos: usize,
    pub segments: usize,
    pub classes: usize,
    pub d_audio: usize,
    pub d_visual: usize,
    pub noise: f64,
    pub max_events: usize,
    /// Probability that a visual event copies one of the video's audio events.
    pub av_correlation: f64,
    /// Per-cell probability of flipping a pseudo-label (all splits; ground
    /// truth is never corrupted).
    pub flip_rate: f64,
    /// Probability that an event-bearing visual training row is left unannotated.
    pub null_rate: f64,
    /// Fraction of videos with unannotated rows that the patch discards
    /// instead of labelling.
    pub discard_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            videos: 200,
            val_videos: 50,
            test_videos: 50,
            segments: 10,
            classes: 25,
            d_audio: 64,
            d_visual: 96,
            noise: 0.1,
            max_events: 3,
            av_correlation: 0.5,
            flip_rate: 0.0,
            null_rate: 0.0,
            discard_rate: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("videos", self.videos),
            ("segments", self.segments),
            ("classes", self.classes),
            ("d_audio", self.d_audio),
            ("d_visual", self.d_visual),
            ("max_events", self.max_events),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(DataError::Config(format!("{name} must be positive")));
            }
        }
        if self.max_events > self.classes {
            return Err(DataError::Config("max_events exceeds classes".into()));
        }
        let probs = [
            ("av_correlation", self.av_correlation),
            ("flip_rate", self.flip_rate),
            ("null_rate", self.null_rate),
            ("discard_rate", self.discard_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(DataError::Config("noise must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// A planted event: class and half-open segment interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedEvent {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

/// Paths of a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

fn unit_directions(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn sample_events(rng: &mut ChaCha8Rng, cfg: &SynthConfig, copy_from: Option<&[PlantedEvent]>) -> Vec<PlantedEvent> {
    let n = rng.gen_range(1..=cfg.max_events);
    let mut events: Vec<PlantedEvent> = Vec::with_capacity(n);
    for _ in 0..n {
        if let Some(source) = copy_from {
            if rng.gen_bool(cfg.av_correlation) {
                let e = source[rng.gen_range(0..source.len())];
                if events.iter().all(|x| x.class != e.class) {
                    events.push(e);
                    continue;
                }
            }
        }
        let class = loop {
            let c = rng.gen_range(0..cfg.classes);
            if events.iter().all(|x| x.class != c) {
                break c;
            }
        };
        let start = rng.gen_range(0..cfg.segments);
        let end = rng.gen_range(start + 1..=cfg.segments);
        events.push(PlantedEvent { class, start, end });
    }
    events
}

fn truth_matrix(events: &[PlantedEvent], segments: usize, classes: usize) -> LabelMatrix {
    let mut m = LabelMatrix::zeros(segments, classes);
    for e in events {
        for t in e.start..e.end {
            m.set(t, e.class, true);
        }
    }
    m
}

fn render(rng: &mut ChaCha8Rng, events: &[PlantedEvent], dirs: &[Vec<f64>], segments: usize, noise: f64) -> Tensor {
    let dim = dirs[0].len();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut x = vec![0.0; segments * dim];
    for e in events {
        for t in e.start..e.end {
            for (k, d) in dirs[e.class].iter().enumerate() {
                x[t * dim + k] += d;
            }
        }
    }
    if noise > 0.0 {
        for v in &mut x {
            *v += normal.sample(rng);
        }
    }
    Tensor::from_vec(x, &[segments, dim]).expect("positive dims")
}

fn flip(rng: &mut ChaCha8Rng, m: &LabelMatrix, rate: f64) -> LabelMatrix {
    let mut out = m.clone();
    if rate > 0.0 {
        for t in 0..m.segments() {
            for c in 0..m.classes() {
                if rng.gen_bool(rate) {
                    out.set(t, c, !m.get(t, c));
                }
            }
        }
    }
    out
}

struct SplitSpec<'a> {
    name: &'a str,
    count: usize,
    with_nulls: bool,
}

/// Writes `train.toml`, `val.toml` and `test.toml` with their feature and
/// label files under `out`.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let vocab = Vocabulary::llp(cfg.classes);
    fs::create_dir_all(out.join("features")).map_err(io_err(out))?;
    fs::create_dir_all(out.join("labels")).map_err(io_err(out))?;

    let mut dir_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(b"directions"));
    let dirs_a = unit_directions(&mut dir_rng, cfg.classes, cfg.d_audio);
    let dirs_v = unit_directions(&mut dir_rng, cfg.classes, cfg.d_visual);

    let specs = [
        SplitSpec { name: "train", count: cfg.videos, with_nulls: true },
        SplitSpec { name: "val", count: cfg.val_videos, with_nulls: false },
        SplitSpec { name: "test", count: cfg.test_videos, with_nulls: false },
    ];
    let mut paths = Vec::new();
    for spec in specs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(spec.name.as_bytes()));
        let mut label_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(format!("{}.labels", spec.name).as_bytes()));
        let mut manifest = DatasetManifest::new(spec.name, cfg.segments, &vocab);
        let pseudo_rel = format!("labels/{}_pseudo.csv", spec.name);
        let truth_rel = format!("labels/{}_truth.csv", spec.name);
        let patch_rel = format!("labels/{}_patch.csv", spec.name);
        manifest.pseudo_labels = Some(pseudo_rel.clone());
        manifest.ground_truth = Some(truth_rel.clone());

        let mut truths = Vec::with_capacity(spec.count);
        let mut pseudos = Vec::with_capacity(spec.count);
        let mut patch_rows: Vec<String> = Vec::new();
        for i in 0..spec.count {
            let id = format!("{}{:05}", spec.name, i);
            let ev_a = sample_events(&mut rng, cfg, None);
            let ev_v = sample_events(&mut rng, cfg, Some(&ev_a));
            let audio = render(&mut rng, &ev_a, &dirs_a, cfg.segments, cfg.noise);
            let visual = render(&mut rng, &ev_v, &dirs_v, cfg.segments, cfg.noise);
            let a_rel = format!("features/{id}_a.avmf");
            let v_rel = format!("features/{id}_v.avmf");
            write_feature_file(&out.join(&a_rel), &audio)?;
            write_feature_file(&out.join(&v_rel), &visual)?;

            let ta = truth_matrix(&ev_a, cfg.segments, cfg.classes);
            let tv = truth_matrix(&ev_v, cfg.segments, cfg.classes);
            let mut labels: Vec<usize> = ev_a.iter().chain(&ev_v).map(|e| e.class).collect();
            labels.sort_unstable();
            labels.dedup();

            let pa = flip(&mut label_rng, &ta, cfg.flip_rate);
            let mut pv = flip(&mut label_rng, &tv, cfg.flip_rate);
            if spec.with_nulls && cfg.null_rate > 0.0 {
                let nulls: Vec<usize> = (0..cfg.segments)
                    .filter(|&t| !tv.row_is_empty(t))
                    .filter(|_| label_rng.gen_bool(cfg.null_rate))
                    .collect();
                for &t in &nulls {
                    pv.set_null(t);
                }
                if !nulls.is_empty() {
                    if label_rng.gen_bool(cfg.discard_rate) {
                        patch_rows.push(format!("{id},v,{},DISCARD", nulls[0]));
                    } else {
                        for &t in &nulls {
                            let names: Vec<&str> = tv.classes_at(t).iter().map(|&c| vocab.name(c)).collect();
                            patch_rows.push(format!("{id},v,{t},{}", names.join(";")));
                        }
                    }
                }
            }

            manifest.videos.push(VideoEntry {
                id: id.clone(),
                audio: a_rel,
                visual: v_rel,
                labels: labels.iter().map(|&c| vocab.name(c).to_string()).collect(),
            });
            truths.push((id.clone(), ta, tv));
            pseudos.push((id, pa, pv));
        }

        write_label_csv(
            &out.join(&pseudo_rel),
            &vocab,
            pseudos.iter().map(|(id, a, v)| (id.as_str(), a, v)),
        )?;
        write_label_csv(
            &out.join(&truth_rel),
            &vocab,
            truths.iter().map(|(id, a, v)| (id.as_str(), a, v)),
        )?;
        if !patch_rows.is_empty() {
            let p = out.join(&patch_rel);
            let mut body = String::from("video_id,modality,segment,labels\n");
            for r in &patch_rows {
                body.push_str(r);
                body.push('\n');
            }
            fs::write(&p, body).map_err(io_err(&p))?;
            manifest.annotation_patch = Some(patch_rel);
        }
        let mpath = out.join(format!("{}.toml", spec.name));
        manifest.write(&mpath)?;
        paths.push(mpath);
    }
    let mut it = paths.into_iter();
    Ok(SynthOutput {
        train: it.next().unwrap(),
        val: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}

/// Shuffles a copy of `0..n` with a seeded RNG.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}
