//! `seizure`: synthesize recordings, fit event-time priors, train and
//! evaluate Bayesian CNN forecasters, and export risk timelines.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 for runtime
//! failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seizure_core::checkpoint::Checkpoint;
use seizure_core::eval::{evaluate_arms, timeline, write_onsets_csv, Arm, RunManifest, TimelineConfig};
use seizure_core::experiment::{fit_event_priors, prepare_dataset, train_arm, ExperimentConfig};
use seizure_core::fusion::EventPriors;
use seizure_core::pipeline::dataset::{plan_split, PatientData};
use seizure_core::pipeline::recording::EEGRecording;
use seizure_core::pipeline::synth::SyntheticSpec;
use seizure_core::uncertainty::{write_timeline_csv, SamplingConfig};
use seizure_core::Error;

#[derive(Parser)]
#[command(name = "seizure", version, about = "Seizure-risk forecasting with Bayesian CNNs and event-time priors")]
struct Cli {
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-patient dataset.
    Synth(SynthArgs),
    /// Fit time-of-day and day-of-week priors on training-fold onsets.
    FitPriors(FitPriorsArgs),
    /// Train one arm on the training folds.
    Train(TrainArgs),
    /// Score test folds and write an AUC report.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo risk timeline over a whole recording.
    Timeline(TimelineArgs),
    /// Print a checkpoint summary as JSON.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment settings as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo sampling.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator settings as JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    sampling_rate: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    separability: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitPriorsArgs {
    /// Directory of recordings.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    arm: Arm,
    #[arg(long)]
    out: PathBuf,
    /// Priors from `fit-priors`; fitted from `--data` when omitted.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch training log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// `ARM=PATH`, or a bare path for a checkpoint that records its arm.
    #[arg(long)]
    checkpoint: Vec<String>,
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    draws: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TimelineArgs {
    /// Recording metadata file (`<stem>.json`).
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Fusion terms to apply; defaults to the checkpoint's arm.
    #[arg(long)]
    arm: Option<Arm>,
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    draws: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

type CliResult<T> = Result<T, CliError>;

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let args = raw[1..].to_vec();
    let result = match cli.command {
        Command::Synth(a) => synth(a, args),
        Command::FitPriors(a) => fit_priors(a, args),
        Command::Train(a) => train(a, args),
        Command::Evaluate(a) => evaluate(a, args),
        Command::Timeline(a) => run_timeline(a, args),
        Command::InspectCheckpoint(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn experiment_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.eval.root_seed = s;
    }
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        cfg.eval.workers = t;
    }
    Ok(cfg)
}

/// Recording metadata files in `dir`, sorted by name.
fn recording_paths(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e?.path();
        let is_meta = p.extension().is_some_and(|x| x == "json") && p.with_extension("f32").exists();
        if is_meta {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no recordings found in {}", dir.display())));
    }
    Ok(paths)
}

fn load_patients(dir: &Path, cfg: &ExperimentConfig, manifest: &mut RunManifest) -> CliResult<Vec<PatientData>> {
    let paths = recording_paths(dir)?;
    for p in &paths {
        manifest.add_input(p)?;
    }
    Ok(prepare_dataset(paths.iter().map(|p| EEGRecording::read(p)), cfg)?)
}

fn load_priors(path: Option<&Path>, patients: &[PatientData], cfg: &ExperimentConfig, manifest: &mut RunManifest) -> CliResult<EventPriors> {
    match path {
        Some(p) => {
            manifest.add_input(p)?;
            Ok(EventPriors::load(p)?)
        }
        None => Ok(fit_event_priors(patients, cfg.kde_mode)?),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn finish(mut manifest: RunManifest, outputs: &[&Path], at: &Path) -> CliResult<()> {
    manifest.outputs = outputs.iter().map(|p| p.to_path_buf()).collect();
    manifest.write(at)?;
    Ok(())
}

fn synth(a: SynthArgs, args: Vec<String>) -> CliResult<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    spec.n_patients = a.patients.unwrap_or(spec.n_patients);
    spec.hours_per_patient = a.hours.unwrap_or(spec.hours_per_patient);
    spec.sampling_rate_hz = a.sampling_rate.unwrap_or(spec.sampling_rate_hz);
    spec.n_channels = a.channels.unwrap_or(spec.n_channels);
    spec.separability = a.separability.unwrap_or(spec.separability);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.validate()?;
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for i in 0..spec.n_patients {
        let rec = spec.synthesize_patient(i)?;
        log::info!("{}: {} onsets", rec.patient_id, rec.seizure_onsets.len());
        let meta = rec.write(&a.out, &rec.patient_id)?;
        outputs.push(meta.with_extension("f32"));
        outputs.push(meta);
    }
    let manifest = RunManifest::new("synth", args, serde_json::to_value(&spec)?, spec.seed);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish(manifest, &refs, &a.out.join("manifest.json"))
}

fn fit_priors(a: FitPriorsArgs, args: Vec<String>) -> CliResult<()> {
    let cfg = experiment_config(&a.common)?;
    let mut manifest = RunManifest::new("fit-priors", args, serde_json::to_value(&cfg)?, cfg.train.seed);
    // only onset times are needed, so skip feature extraction
    let mut onsets = Vec::new();
    for p in recording_paths(&a.data)? {
        manifest.add_input(&p)?;
        let rec = EEGRecording::read(&p)?;
        onsets.extend(plan_split(&rec, &cfg.labeling, &cfg.split)?.train_leading);
    }
    if onsets.is_empty() {
        return Err(Error::Fit("no training-fold seizures to fit event priors".into()).into());
    }
    let priors = EventPriors::fit(&onsets, cfg.kde_mode)?;
    priors.save(&a.out)?;
    println!("fitted priors on {} onsets -> {}", onsets.len(), a.out.display());
    finish(manifest, &[&a.out], &manifest_path(&a.out))
}

fn train(a: TrainArgs, args: Vec<String>) -> CliResult<()> {
    let mut cfg = experiment_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let mut manifest = RunManifest::new("train", args, serde_json::to_value(&cfg)?, cfg.train.seed);
    let patients = load_patients(&a.data, &cfg, &mut manifest)?;
    let priors = load_priors(a.priors.as_deref(), &patients, &cfg, &mut manifest)?;
    let out = train_arm(&patients, a.arm, &priors, &cfg)?;
    out.checkpoint.save(&a.out)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(log) = &a.log {
        seizure_core::checkpoint::write_atomic(log, out.report.to_json_lines()?.as_bytes())?;
        outputs.push(log);
    }
    if let Some(last) = out.report.epochs.last() {
        println!(
            "{}: {} epochs, final neg-ELBO {:.4}, accuracy {:.3} -> {}",
            a.arm,
            out.report.epochs.len(),
            last.neg_elbo,
            last.accuracy,
            a.out.display()
        );
    }
    finish(manifest, &outputs, &manifest_path(&a.out))
}

fn checkpoint_arm(ckpt: &Checkpoint) -> Option<Arm> {
    serde_json::from_value(ckpt.metadata.get("arm")?.clone()).ok()
}

fn evaluate(a: EvaluateArgs, args: Vec<String>) -> CliResult<()> {
    if a.checkpoint.is_empty() {
        return Err(CliError::Usage("--checkpoint is required (ARM=PATH, repeatable)".into()));
    }
    let mut cfg = experiment_config(&a.common)?;
    if let Some(d) = a.draws {
        cfg.eval.draws = d;
    }
    let mut manifest = RunManifest::new("evaluate", args, serde_json::to_value(&cfg)?, cfg.eval.root_seed);
    let mut checkpoints = BTreeMap::new();
    for spec in &a.checkpoint {
        let (arm, path) = match spec.split_once('=') {
            Some((arm, path)) => (Some(arm.parse::<Arm>()?), PathBuf::from(path)),
            None => (None, PathBuf::from(spec)),
        };
        let ckpt = Checkpoint::load(&path)
            .map_err(|e| CliError::Usage(format!("--checkpoint {}: {e}", path.display())))?;
        let arm = arm.or_else(|| checkpoint_arm(&ckpt)).ok_or_else(|| {
            CliError::Usage(format!("--checkpoint {}: arm not recorded; pass ARM=PATH", path.display()))
        })?;
        manifest.add_input(&path)?;
        checkpoints.insert(arm, ckpt);
    }
    let arms: Vec<Arm> = checkpoints.keys().copied().collect();
    let patients = load_patients(&a.data, &cfg, &mut manifest)?;
    let needs_priors = arms.iter().any(|arm| arm.fusion(cfg.eval.fusion_mode, true).is_active());
    let priors = if needs_priors {
        load_priors(a.priors.as_deref(), &patients, &cfg, &mut manifest)?
    } else {
        EventPriors::uniform()
    };
    let report = evaluate_arms(&patients, &checkpoints, &priors, &arms, &cfg.eval)?;
    report.write(&a.out)?;
    for r in &report.arms {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!("{:<12} macro AUC {}  pooled AUC {}", r.arm.label(), fmt(r.macro_auc), fmt(r.pooled_auc));
    }
    finish(manifest, &[&a.out], &manifest_path(&a.out))
}

fn run_timeline(a: TimelineArgs, args: Vec<String>) -> CliResult<()> {
    let mut cfg = experiment_config(&a.common)?;
    if let Some(d) = a.draws {
        cfg.eval.draws = d;
    }
    let mut manifest = RunManifest::new("timeline", args, serde_json::to_value(&cfg)?, cfg.eval.root_seed);
    let ckpt = Checkpoint::load(&a.checkpoint)
        .map_err(|e| CliError::Usage(format!("--checkpoint {}: {e}", a.checkpoint.display())))?;
    manifest.add_input(&a.checkpoint)?;
    let arm = a.arm.or_else(|| checkpoint_arm(&ckpt)).unwrap_or(Arm::EegOnly);
    let fusion = arm.fusion(cfg.eval.fusion_mode, true);
    let priors = match (&a.priors, fusion.is_active()) {
        (Some(p), true) => {
            manifest.add_input(p)?;
            EventPriors::load(p)?
        }
        (None, true) => return Err(CliError::Usage(format!("--priors is required for arm {arm}"))),
        (_, false) => EventPriors::uniform(),
    };
    manifest.add_input(&a.recording)?;
    let rec = EEGRecording::read(&a.recording)?;
    let tc = TimelineConfig {
        labeling: cfg.labeling,
        spectrogram: cfg.spectrogram,
        sampling: SamplingConfig {
            draws: cfg.eval.draws,
            root_seed: cfg.eval.root_seed,
            workers: cfg.eval.workers,
        },
        fusion,
        batch: 256,
    };
    let points = timeline(&rec, &ckpt, &priors, &tc)?;
    let mut csv = Vec::new();
    write_timeline_csv(&mut csv, &points)?;
    seizure_core::checkpoint::write_atomic(&a.out, &csv)?;
    let onsets_path = a.out.with_extension("onsets.csv");
    let mut sidecar = Vec::new();
    write_onsets_csv(&mut sidecar, &rec.seizure_onsets, cfg.labeling.leading_merge_min)?;
    seizure_core::checkpoint::write_atomic(&onsets_path, &sidecar)?;
    println!("{} windows -> {}", points.len(), a.out.display());
    finish(manifest, &[&a.out, &onsets_path], &manifest_path(&a.out))
}

fn inspect(a: InspectArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.path).map_err(|e| CliError::Usage(format!("{}: {e}", a.path.display())))?;
    println!("{}", serde_json::to_string_pretty(&ckpt.summary())?);
    Ok(())
}
