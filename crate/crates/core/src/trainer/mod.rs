//! Training, evaluation and ablation loops.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{count_label_distribution, generate_cmrc_batch, AugmentConfig, AugmentError, Target};
use crate::data::manifest::resolve;
use crate::data::synth::seeded_permutation;
use crate::data::{io_err, load_split, DataError, GroundTruth, Split, VideoRecord};
use crate::metrics::{aggregate_report, binarize, binarize_probs, MetricReport, MetricsError, SegmentPrediction};
use crate::model::{AmfMode, AvMamba, ModelConfig, ModelOutputs};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::optim::{adamw_step, OptimizerState};
use crate::tensor::params::stable_hash;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("non-finite {tensor} for video {video} at epoch {epoch}")]
    NonFinite { tensor: String, video: String, epoch: usize },
    #[error("split {0} has no ground truth")]
    NoGroundTruth(PathBuf),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Training manifest.
    pub train: PathBuf,
    /// Model selection split; without it the last epoch is kept.
    pub val: Option<PathBuf>,
    /// Split scored by `eval` and `ablate`.
    pub test: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// CMRC batch size as a multiple of the training pool; 0 disables it.
    pub cmrc_multiplier: f64,
    /// Classes must appear in more than this many videos to drive CMRC sampling.
    pub cmrc_min_count: usize,
    pub threshold: f64,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Also score the training split after every epoch.
    pub eval_train: bool,
    /// Stop once the training segment Type@AV reaches this value (needs `eval_train`).
    pub stop_at_train_type_av: Option<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::from("train.toml"),
            val: None,
            test: None,
            epochs: 20,
            batch_size: 16,
            lr: 3e-4,
            weight_decay: 0.01,
            seed: 0,
            cmrc_multiplier: 0.0,
            cmrc_min_count: 50,
            threshold: 0.5,
            checkpoint: None,
            log: None,
            eval_train: false,
            stop_at_train_type_av: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| DataError::Format {
            path: path.to_path_buf(),
            field: "config",
            message: e.to_string(),
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path relative to `base` instead.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| *p = resolve(base, &p.to_string_lossy());
        fix(&mut self.train);
        for p in [&mut self.val, &mut self.test, &mut self.checkpoint, &mut self.log].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.cmrc_multiplier >= 0.0 && self.cmrc_multiplier.is_finite()) {
            return bad("cmrc_multiplier must be non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.stop_at_train_type_av.is_some() && !self.eval_train {
            return bad("stop_at_train_type_av needs eval_train");
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Copies the data-determined sizes (segments, classes, feature widths)
/// into the model config.
pub fn fit_model_config(cfg: &ModelConfig, split: &Split) -> ModelConfig {
    let mut m = cfg.clone();
    m.segments = split.segments();
    m.classes = split.vocab.len();
    if let Some((da, dv)) = split.feature_dims() {
        m.d_audio = da;
        m.d_visual = dv;
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val: Option<MetricReport>,
    pub train: Option<MetricReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub param_count: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let cols = MetricReport::COLUMNS;
        let mut out = String::from("epoch,loss,seconds,params");
        for prefix in ["val", "train"] {
            for c in cols {
                out.push_str(&format!(",{prefix}_{c}"));
            }
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{:?},{:.3},{}", e.epoch, e.loss, e.seconds, self.param_count));
            for r in [&e.val, &e.train] {
                match r {
                    Some(r) => r.values().iter().for_each(|v| out.push_str(&format!(",{v:?}"))),
                    None => out.push_str(&",".repeat(cols.len())),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    /// Holds the selected (best) parameters.
    pub model: AvMamba,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val: Option<MetricReport>,
    /// Mean loss over the training set before any update.
    pub initial_loss: f64,
    /// Base plus CMRC videos.
    pub train_videos: usize,
    pub cmrc_videos: usize,
}

/// Mean per-video loss; names the first non-finite tensor if the loss is not finite.
fn batch_loss(model: &AvMamba, batch: &[&VideoRecord], epoch: usize) -> Result<(Tensor, f64)> {
    let mut total: Option<Tensor> = None;
    let mut sum = 0.0;
    for r in batch {
        let out = model.forward(&model.input_for(r))?;
        let loss = model.loss(&out, r)?;
        let v = loss.item();
        if !v.is_finite() {
            return Err(non_finite(&out, &r.video_id, epoch));
        }
        sum += v;
        total = Some(match total {
            Some(t) => t.add(&loss)?,
            None => loss,
        });
    }
    let n = batch.len() as f64;
    Ok((total.expect("non-empty batch").scale(1.0 / n), sum / n))
}

fn non_finite(out: &ModelOutputs, video: &str, epoch: usize) -> TrainError {
    let mut named: Vec<(String, &Tensor)> = out
        .stages
        .all()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    named.push(("seg_prob_a".into(), &out.seg_prob_a));
    named.push(("seg_prob_v".into(), &out.seg_prob_v));
    named.push(("video_prob".into(), &out.video_prob));
    let tensor = named
        .into_iter()
        .find(|(_, t)| !t.all_finite())
        .map_or_else(|| "loss".to_string(), |(n, _)| n);
    TrainError::NonFinite { tensor, video: video.to_string(), epoch }
}

/// Scores `model` on the records of `split` against its ground truth.
pub fn evaluate(model: &AvMamba, split: &Split, threshold: f64) -> Result<MetricReport> {
    let gt = split
        .ground_truth
        .as_ref()
        .ok_or_else(|| TrainError::NoGroundTruth(split.dir.join(&split.manifest.split)))?;
    let preds = predict(model, &split.records, threshold)?;
    Ok(aggregate_report(&preds, gt)?)
}

pub fn predict(model: &AvMamba, records: &[VideoRecord], threshold: f64) -> Result<Vec<SegmentPrediction>> {
    let outputs = model.model_forward(records)?;
    records
        .iter()
        .zip(&outputs)
        .map(|(r, o)| Ok(binarize(&r.video_id, o, threshold, threshold)?))
        .collect()
}

/// Debug path: predictions built from the ground truth itself, pushed
/// through the same binarization and scoring. Scores 1.0 everywhere.
pub fn evaluate_oracle(split: &Split, threshold: f64) -> Result<MetricReport> {
    let gt = split
        .ground_truth
        .as_ref()
        .ok_or_else(|| TrainError::NoGroundTruth(split.dir.join(&split.manifest.split)))?;
    let prob = |m: &crate::data::LabelMatrix| -> Result<Tensor> {
        let v = (0..m.segments())
            .flat_map(|t| (0..m.classes()).map(move |c| (t, c)))
            .map(|(t, c)| if m.get(t, c) { 1.0 - 1e-6 } else { 1e-6 })
            .collect();
        Ok(Tensor::from_vec(v, &[m.segments(), m.classes()])?)
    };
    let preds = split
        .records
        .iter()
        .map(|r| {
            let g: &GroundTruth = gt
                .get(&r.video_id)
                .ok_or_else(|| MetricsError::MissingGroundTruth(r.video_id.clone()))?;
            let any = (0..g.audio.classes())
                .map(|c| if g.audio.column_any(c) || g.visual.column_any(c) { 1.0 - 1e-6 } else { 1e-6 })
                .collect();
            let video = Tensor::from_vec(any, &[g.audio.classes()])?;
            Ok(binarize_probs(&r.video_id, &prob(&g.audio)?, &prob(&g.visual)?, &video, threshold, threshold)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_report(&preds, gt)?)
}

/// Builds the CMRC batch for `records` (empty when the multiplier is 0).
pub fn cmrc_records(config: &TrainConfig, records: &[VideoRecord], classes: usize) -> Result<Vec<VideoRecord>> {
    if config.cmrc_multiplier == 0.0 {
        return Ok(Vec::new());
    }
    let target = (config.cmrc_multiplier * records.len() as f64).round() as usize;
    let aug = AugmentConfig {
        target: Target::Count(target),
        min_count: config.cmrc_min_count,
        seed: config.seed ^ stable_hash(b"cmrc"),
        ..AugmentConfig::default()
    };
    let dist = count_label_distribution(records, classes, config.cmrc_min_count);
    Ok(generate_cmrc_batch(records, &dist, &aug, target)?
        .into_iter()
        .map(|c| c.record)
        .collect())
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let train_split = load_split(&config.train)?;
    let val_split = config.val.as_deref().map(load_split).transpose()?;
    train_on(config, &train_split, val_split.as_ref())
}

/// [`train`] on splits that are already loaded.
pub fn train_on(config: &TrainConfig, train_split: &Split, val_split: Option<&Split>) -> Result<TrainOutcome> {
    config.validate()?;
    if train_split.records.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    if config.eval_train && train_split.ground_truth.is_none() {
        return Err(TrainError::NoGroundTruth(config.train.clone()));
    }
    let model_cfg = fit_model_config(&config.model, train_split);
    let model = AvMamba::with_vocabulary(model_cfg, &train_split.vocab, config.seed)?;

    let cmrc = cmrc_records(config, &train_split.records, train_split.vocab.len())?;
    let pool: Vec<&VideoRecord> = train_split.records.iter().chain(&cmrc).collect();

    let params = model.parameters();
    let mut opt = OptimizerState::new(&params, config.lr, config.weight_decay);

    let initial_loss = {
        let mut sum = 0.0;
        for chunk in pool.chunks(config.batch_size) {
            sum += batch_loss(&model, chunk, 0)?.1 * chunk.len() as f64;
        }
        sum / pool.len() as f64
    };

    let mut log = TrainLog { param_count: model.param_count(), epochs: Vec::new() };
    let mut best: Option<(f64, usize, Vec<Vec<f64>>, Option<MetricReport>)> = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let order = seeded_permutation(pool.len(), config.seed ^ stable_hash(format!("epoch{epoch}").as_bytes()));
        let shuffled: Vec<&VideoRecord> = order.iter().map(|&i| pool[i]).collect();
        let mut loss_sum = 0.0;
        for chunk in shuffled.chunks(config.batch_size) {
            let (loss, value) = batch_loss(&model, chunk, epoch)?;
            loss_sum += value * chunk.len() as f64;
            model.store.reset_grads();
            model.store.backward(&loss)?;
            adamw_step(&params, &mut opt)?;
        }
        let val = val_split.map(|s| evaluate(&model, s, config.threshold)).transpose()?;
        let train_report = if config.eval_train {
            Some(evaluate(&model, train_split, config.threshold)?)
        } else {
            None
        };
        log.epochs.push(EpochLog {
            epoch,
            loss: loss_sum / pool.len() as f64,
            val,
            train: train_report,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let Some(path) = &config.log {
            fs::write(path, log.to_csv()).map_err(io_err(path))?;
        }

        let score = val.map_or(epoch as f64, |r| r.segment.type_av);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, model.store.snapshot(), val));
            if let Some(path) = &config.checkpoint {
                checkpoint::save(path, &model.store)?;
            }
        }
        if let (Some(target), Some(r)) = (config.stop_at_train_type_av, train_report) {
            if r.segment.type_av >= target {
                break;
            }
        }
    }
    let (_, best_epoch, snapshot, best_val) = best.expect("at least one epoch");
    model.store.restore(&snapshot)?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val,
        initial_loss,
        train_videos: pool.len(),
        cmrc_videos: cmrc.len(),
    })
}

/// Rebuilds the model described by `config` for `split` and loads `checkpoint` into it.
pub fn load_model(config: &TrainConfig, split: &Split, checkpoint_path: &Path) -> Result<AvMamba> {
    let model_cfg = fit_model_config(&config.model, split);
    let model = AvMamba::with_vocabulary(model_cfg, &split.vocab, config.seed)?;
    checkpoint::load_into(checkpoint_path, &model.store)?;
    Ok(model)
}

/// Loads a checkpoint and scores it on the split at `split_path`.
pub fn evaluate_checkpoint(config: &TrainConfig, checkpoint_path: &Path, split_path: &Path) -> Result<MetricReport> {
    let split = load_split(split_path)?;
    let model = load_model(config, &split, checkpoint_path)?;
    evaluate(&model, &split, config.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Cmrc,
    Tsa,
    Amf,
    Mfe,
    Plsim,
}

impl Component {
    pub const ALL: [Component; 5] = [Component::Cmrc, Component::Tsa, Component::Amf, Component::Mfe, Component::Plsim];

    /// `config` with this component removed.
    pub fn disable(self, config: &TrainConfig) -> TrainConfig {
        let mut c = config.clone();
        match self {
            Component::Cmrc => c.cmrc_multiplier = 0.0,
            Component::Tsa => c.model.use_tsa = false,
            Component::Amf => c.model.amf = AmfMode::Private,
            Component::Mfe => c.model.use_mfe = false,
            Component::Plsim => c.model.use_plsim = false,
        }
        c
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Cmrc => "cmrc",
            Component::Tsa => "tsa",
            Component::Amf => "amf",
            Component::Mfe => "mfe",
            Component::Plsim => "plsim",
        })
    }
}

impl FromStr for Component {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrainError::Config(format!("unknown component {s:?}; expected one of cmrc, tsa, amf, mfe, plsim")))
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub component: Component,
    pub report: MetricReport,
    pub train_videos: usize,
}

/// Trains the variant without `component` and scores it on the test split
/// (the validation split when no test split is configured).
pub fn ablate(config: &TrainConfig, component: Component) -> Result<AblationResult> {
    let cfg = component.disable(config);
    let outcome = train(&cfg)?;
    let target = cfg
        .test
        .as_ref()
        .or(cfg.val.as_ref())
        .ok_or_else(|| TrainError::Config("ablate needs a test or val split".into()))?;
    let split = load_split(target)?;
    Ok(AblationResult {
        component,
        report: evaluate(&outcome.model, &split, cfg.threshold)?,
        train_videos: outcome.train_videos,
    })
}
