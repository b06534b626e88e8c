//! `mug`: synthetic data, CMRC augmentation, training, evaluation and self-checks.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mug::augment::{
    count_label_distribution, generate_cmrc_batch, write_cmrc_batch, AugmentError, Target,
};
use mug::checks::{gradient_suite, scan_oracle_suite};
use mug::data::{generate_synthetic_dataset, load_split, DataError, DatasetManifest, Vocabulary};
use mug::data::manifest::resolve;
use mug::metrics::{evaluate_dumps, read_label_dump, write_prediction_dump, MetricReport, MetricsError};
use mug::tensor::TensorError;
use mug::trainer::{self, Component, TrainConfig, TrainError};

use config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "mug", version, about = "Audio-visual video parsing with selective state-space fusion")]
struct Cli {
    /// TOML file with [synth], [augment], [train] and [checks] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (train, val and test splits).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Training videos.
        #[arg(long)]
        videos: Option<usize>,
    },
    /// Generate a CMRC batch from a training manifest.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Batch size as a fraction of the pool: 0.25, 0.5, 0.75, 1 or 2.
        #[arg(long, conflicts_with = "count")]
        multiplier: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model; writes model.mugc, train_log.csv and config.toml.
    Train {
        /// Training manifest (overrides the config).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint; writes scores.csv and predictions.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score; defaults to the configured test, then val split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train without one component and score it.
    Ablate {
        /// cmrc, tsa, amf, mfe or plsim.
        #[arg(long)]
        component: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also train the full model for comparison.
        #[arg(long)]
        with_full: bool,
    },
    /// Score a prediction dump against ground truth, no model involved.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth CSV (LLP vocabulary) or a dataset manifest.
        #[arg(long)]
        gt: PathBuf,
        /// Segments per video for a CSV ground truth.
        #[arg(long, default_value_t = 10)]
        segments: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parallel, backward and dynamic scans against their reference forms.
    ScanCheck {
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Finite-difference gradient checks over every op and a tiny model.
    GradCheck {
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

fn tensor_code(e: &TensorError) -> u8 {
    match e {
        TensorError::Config(_) => 1,
        _ => 2,
    }
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Tensor(t) => tensor_code(t),
        _ => 1,
    }
}

impl CliError {
    /// 1 for bad input, 2 for failures inside the library.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Data(e) => data_code(e),
            CliError::Augment(AugmentError::Data(e)) => data_code(e),
            CliError::Augment(_) => 1,
            CliError::Metrics(MetricsError::Data(e)) => data_code(e),
            CliError::Metrics(_) => 1,
            CliError::Train(e) => match e {
                TrainError::NonFinite { .. } => 2,
                TrainError::Tensor(t) => tensor_code(t),
                TrainError::Data(d) => data_code(d),
                TrainError::Augment(AugmentError::Data(d)) => data_code(d),
                TrainError::Metrics(MetricsError::Data(d)) => data_code(d),
                _ => 1,
            },
            CliError::Tensor(t) => tensor_code(t),
            CliError::CheckFailed(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn scores_csv(report: &MetricReport) -> String {
    format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row())
}

fn synth(cfg: &CliConfig, out: &Path, videos: Option<usize>) -> Result<()> {
    let mut sc = cfg.synth.clone();
    if let Some(n) = videos {
        sc.videos = n;
    }
    let written = generate_synthetic_dataset(&sc, out)?;
    println!("train {}", written.train.display());
    println!("val {}", written.val.display());
    println!("test {}", written.test.display());
    Ok(())
}

fn augment(cfg: &CliConfig, data: &Path, out: &Path, multiplier: Option<f64>, count: Option<usize>) -> Result<()> {
    let mut ac = cfg.augment.clone();
    if let Some(m) = multiplier {
        ac.target = Target::Multiplier(m);
    }
    if let Some(n) = count {
        ac.target = Target::Count(n);
    }
    ac.validate()?;
    let split = load_split(data)?;
    let classes = split.vocab.len();
    let dist = count_label_distribution(&split.records, classes, ac.min_count);
    let target = ac.target_count(split.records.len());
    let batch = generate_cmrc_batch(&split.records, &dist, &ac, target)?;
    let files = write_cmrc_batch(out, &batch, &split.vocab, split.segments())?;
    let l1 = dist.l1_distance(batch.iter().map(|c| c.record.video_label.as_slice()));
    println!("pool {} videos, generated {} records", split.records.len(), batch.len());
    println!("retained classes {} (count > {}), L1 to retained distribution {l1:.4}", dist.retained.len(), ac.min_count);
    println!("manifest {}", files.manifest.display());
    println!("pseudo labels {}", files.pseudo_labels.display());
    println!("provenance {}", files.provenance.display());
    Ok(())
}

fn train(cfg: &CliConfig, data: Option<PathBuf>, val: Option<PathBuf>, out: &Path, epochs: Option<usize>) -> Result<()> {
    create_dir(out)?;
    let mut tc = cfg.train.clone();
    if let Some(d) = data {
        tc.train = d;
    }
    if val.is_some() {
        tc.val = val;
    }
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    tc.checkpoint = Some(out.join("model.mugc"));
    tc.log = Some(out.join("train_log.csv"));
    let outcome = trainer::train(&tc)?;

    let mut saved = cfg.clone();
    saved.train = tc.clone();
    for p in [&mut saved.train.train]
        .into_iter()
        .chain([&mut saved.train.val, &mut saved.train.test, &mut saved.train.checkpoint, &mut saved.train.log].into_iter().flatten())
    {
        if let Ok(abs) = fs::canonicalize(&*p) {
            *p = abs;
        }
    }
    write_file(&out.join("config.toml"), &saved.to_toml())?;

    println!(
        "params {}, videos {} ({} CMRC), epochs run {}, best epoch {}",
        outcome.log.param_count,
        outcome.train_videos,
        outcome.cmrc_videos,
        outcome.log.epochs.len(),
        outcome.best_epoch
    );
    println!("initial loss {:.5}, final loss {:.5}", outcome.initial_loss, outcome.log.epochs.last().map_or(f64::NAN, |e| e.loss));
    if let Some(r) = &outcome.best_val {
        println!("validation at best epoch:\n{r}");
    }
    println!("checkpoint {}", out.join("model.mugc").display());
    Ok(())
}

/// `--config`, else the `config.toml` that `train` left next to the checkpoint.
fn eval_config(cfg: &CliConfig, checkpoint: &Path) -> Result<CliConfig> {
    if cfg.source.is_some() {
        return Ok(cfg.clone());
    }
    let sibling = checkpoint.parent().unwrap_or(Path::new(".")).join("config.toml");
    if sibling.exists() {
        Ok(CliConfig::read(&sibling)?)
    } else {
        Ok(cfg.clone())
    }
}

fn eval(cfg: &CliConfig, checkpoint: &Path, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = eval_config(cfg, checkpoint)?;
    let tc = &cfg.train;
    let split_path = data
        .or_else(|| tc.test.clone())
        .or_else(|| tc.val.clone())
        .ok_or_else(|| CliError::Usage("eval needs --data or a test/val split in the config".into()))?;
    let split = load_split(&split_path)?;
    let model = trainer::load_model(tc, &split, checkpoint)?;
    let report = trainer::evaluate(&model, &split, tc.threshold)?;
    println!("{report}");
    let out = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    create_dir(&out)?;
    write_file(&out.join("scores.csv"), &scores_csv(&report))?;
    let preds = trainer::predict(&model, &split.records, tc.threshold)?;
    write_prediction_dump(&out.join("predictions.csv"), &split.vocab, &preds)?;
    println!("scores {}", out.join("scores.csv").display());
    Ok(())
}

fn ablate(cfg: &CliConfig, component: &str, out: Option<PathBuf>, with_full: bool) -> Result<()> {
    let component: Component = component.parse()?;
    let tc: &TrainConfig = &cfg.train;
    let result = trainer::ablate(tc, component)?;
    let mut rows = vec![(format!("wo/{component}"), result.report)];
    if with_full {
        let full = trainer::train(tc)?;
        let target = tc.test.as_ref().or(tc.val.as_ref()).expect("ablate checked the split");
        let split = load_split(target)?;
        rows.insert(0, ("full".to_string(), trainer::evaluate(&full.model, &split, tc.threshold)?));
    }
    println!("wo/{component} trained on {} videos", result.train_videos);
    let mut csv = format!("variant,{}\n", MetricReport::csv_header());
    for (name, report) in &rows {
        println!("{name}\n{report}");
        csv.push_str(&format!("{name},{}\n", report.csv_row()));
    }
    if let Some(out) = out {
        create_dir(&out)?;
        let path = out.join(format!("ablation_{component}.csv"));
        write_file(&path, &csv)?;
        println!("report {}", path.display());
    }
    Ok(())
}

fn metrics(pred: &Path, gt: &Path, segments: usize, out: Option<PathBuf>) -> Result<()> {
    let is_manifest = gt.extension().is_some_and(|e| e == "toml");
    let report = if is_manifest {
        let manifest = DatasetManifest::read(gt)?;
        let vocab = manifest.vocabulary()?;
        let gt_file = manifest.ground_truth.as_ref().ok_or_else(|| {
            CliError::Usage(format!("{}: manifest has no ground_truth file", gt.display()))
        })?;
        let dir = gt.parent().unwrap_or(Path::new("."));
        let truth = read_label_dump(&resolve(dir, gt_file), &vocab, manifest.segments)?;
        let preds = read_label_dump(pred, &vocab, manifest.segments)?;
        let ids: Vec<String> = manifest.videos.iter().map(|v| v.id.clone()).collect();
        evaluate_dumps(&preds, &truth, Some(&ids), manifest.segments, vocab.len())?
    } else {
        if segments == 0 {
            return Err(CliError::Usage("--segments must be positive".into()));
        }
        let vocab = Vocabulary::llp(25);
        let truth = read_label_dump(gt, &vocab, segments)?;
        let preds = read_label_dump(pred, &vocab, segments)?;
        evaluate_dumps(&preds, &truth, None, segments, vocab.len())?
    };
    println!("{report}");
    if let Some(out) = out {
        create_dir(&out)?;
        write_file(&out.join("metrics.csv"), &scores_csv(&report))?;
    }
    Ok(())
}

fn scan_check(cfg: &CliConfig, cases: Option<usize>) -> Result<()> {
    let cases = cases.unwrap_or(cfg.checks.cases);
    let r = scan_oracle_suite(cfg.seed(), cases)?;
    println!("cases                      {}", r.cases);
    println!("parallel vs sequential     {:.3e}", r.parallel_vs_sequential);
    println!("backward vs reversed       {:.3e}", r.backward_vs_reversed);
    println!("dynamic one-hot vs forward {:.3e}", r.one_hot_vs_forward);
    println!("dynamic vs term mixture    {:.3e}", r.mixture_vs_terms);
    if let Some(c) = r.worst_case {
        println!("worst parallel case        T={} D={} N={}", c.t, c.d, c.n);
    }
    println!("elapsed                    {:.2}s", r.seconds);
    if r.passed(1e-9, 1e-12) {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::CheckFailed("scan deviations above tolerance".into()))
    }
}

fn grad_check(cfg: &CliConfig, tolerance: Option<f64>) -> Result<()> {
    let tol = tolerance.unwrap_or(cfg.checks.tolerance);
    if !(tol > 0.0) {
        return Err(CliError::Usage("--tolerance must be positive".into()));
    }
    let r = gradient_suite(cfg.seed(), tol)?;
    for e in &r.entries {
        let probed: usize = e.report.tensors.iter().map(|t| t.probed).sum();
        let mark = if e.report.passed() { "ok" } else { "FAIL" };
        println!("{:<28} {:>6} probes  max rel err {:.3e}  {mark}", e.name, probed, e.report.max_rel_err());
    }
    println!("elapsed {:.2}s, tolerance {tol:e}", r.seconds);
    if r.passed() {
        println!("PASS");
        Ok(())
    } else {
        let bad: Vec<&str> = r.entries.iter().filter(|e| !e.report.passed()).map(|e| e.name.as_str()).collect();
        Err(CliError::CheckFailed(format!("gradient mismatch in {}", bad.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    cfg.apply_seed(cli.seed);
    match cli.command {
        Command::Synth { out, videos } => synth(&cfg, &out, videos),
        Command::Augment { data, out, multiplier, count } => augment(&cfg, &data, &out, multiplier, count),
        Command::Train { data, val, out, epochs } => train(&cfg, data, val, &out, epochs),
        Command::Eval { checkpoint, data, out } => eval(&cfg, &checkpoint, data, out),
        Command::Ablate { component, out, with_full } => ablate(&cfg, &component, out, with_full),
        Command::Metrics { pred, gt, segments, out } => metrics(&pred, &gt, segments, out),
        Command::ScanCheck { cases } => scan_check(&cfg, cases),
        Command::GradCheck { tolerance } => grad_check(&cfg, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
