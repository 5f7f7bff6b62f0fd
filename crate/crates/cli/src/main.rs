//! `confuseq`: run any pipeline stage, or all of them, from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use confuseq_core::config::PipelineConfig;
use confuseq_core::error::{Error as CoreError, ErrorClass};
use confuseq_core::io::{
    read_epochs, read_features_csv, read_report, read_stimuli, read_traces, write_epochs, write_features_csv,
    write_report, write_traces,
};
use confuseq_core::learn::{load_model, save_model, Model, SplitSpec};
use confuseq_core::model::{ConditionLabel, TrialId};
use confuseq_core::pipeline::{
    self, labels_from_stimuli, make_split, table_labels, trace_labels, EvalSummary, GazeReport,
};
use confuseq_core::synth::{synth_dataset, SynthSpec};

#[derive(Parser)]
#[command(name = "confuseq", version, about = "EEG + eye-tracking reading-confusion pipeline")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set classifier.n_estimators=50`.
    /// Values are parsed as JSON, falling back to a plain string.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,

    /// Seed for every random choice (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "CONFUSEQ_THREADS")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (EEG, events, gaze, stimuli, manifest).
    Synth(SynthArgs),
    /// Filter, clean, epoch and z-score a continuous EEG recording.
    PreprocessEeg(PreprocessEegArgs),
    /// Confidence filtering, clustering, features and traces for gaze data.
    PreprocessGaze(PreprocessGazeArgs),
    /// Windowed band-power and statistical features from epochs.
    Features(FeaturesArgs),
    /// N400 waveforms and per-channel significance maps.
    Erp(ErpArgs),
    /// Train the EEG boosted-tree model or the gaze CNN.
    Train(TrainArgs),
    /// Score a trained model on both sides of a split.
    Evaluate(EvaluateArgs),
    /// Fuse EEG and gaze predictions and score the ensemble.
    Ensemble(EnsembleArgs),
    /// Map gaze fixations onto the words of each stimulus.
    Align(AlignArgs),
    /// Run every stage end to end on a dataset directory.
    Pipeline(PipelineArgs),
    /// Render a markdown summary from evaluation and ERP reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis spec (JSON); defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", required_unless_present = "print_spec")]
    out: Option<PathBuf>,
    /// Number of trials (split 120/99/81 proportionally).
    #[arg(long)]
    n_trials: Option<usize>,
    /// Print the effective spec as JSON instead of generating data.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Args)]
struct PreprocessEegArgs {
    /// EEG CSV.
    #[arg(long, value_name = "FILE")]
    eeg: PathBuf,
    /// Trial onset events (JSON lines).
    #[arg(long, value_name = "FILE")]
    events: PathBuf,
    /// Stimuli JSON supplying the trial labels.
    #[arg(long, value_name = "FILE")]
    stimuli: PathBuf,
    /// Epoch container to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Preprocessing report (bad channels, ICA) to write.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessGazeArgs {
    /// Gaze CSV (t,x,y,c,trial_id).
    #[arg(long, value_name = "FILE")]
    gaze: PathBuf,
    /// Stimuli JSON with word boxes and labels.
    #[arg(long, value_name = "FILE")]
    stimuli: PathBuf,
    /// Directory for gaze_features.csv, traces.cfqg and gaze_report.json.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Participant key for per-participant gaze overrides.
    #[arg(long)]
    participant: Option<String>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Epoch container.
    #[arg(long, value_name = "FILE")]
    epochs: PathBuf,
    /// Feature CSV to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ErpArgs {
    /// Epoch containers, one per participant.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    epochs: Vec<PathBuf>,
    /// ERP report to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    /// Boosted trees on EEG features.
    GbtEeg,
    /// CNN on gaze traces.
    CnnGaze,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Feature CSV (for gbt-eeg).
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Trace container (for cnn-gaze).
    #[arg(long, value_name = "FILE")]
    traces: Option<PathBuf>,
    /// Split JSON; created from the input labels when the file is missing.
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Feature CSV (for boosted-tree models).
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Trace container (for CNN models).
    #[arg(long, value_name = "FILE")]
    traces: Option<PathBuf>,
    /// Split JSON.
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// Evaluation report to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Per-trial probabilities to write.
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// EEG per-trial probabilities (from `evaluate --predictions`).
    #[arg(long, value_name = "FILE")]
    eeg: PathBuf,
    /// Gaze per-trial probabilities.
    #[arg(long, value_name = "FILE")]
    eye: PathBuf,
    /// Stimuli JSON supplying the trial labels.
    #[arg(long, value_name = "FILE")]
    stimuli: PathBuf,
    /// Split JSON.
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// Evaluation report to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Fused per-trial predictions to write.
    #[arg(long, value_name = "FILE")]
    fused: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// Gaze CSV.
    #[arg(long, value_name = "FILE")]
    gaze: PathBuf,
    /// Stimuli JSON.
    #[arg(long, value_name = "FILE")]
    stimuli: PathBuf,
    /// Alignment JSON to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Participant key for per-participant gaze overrides.
    #[arg(long)]
    participant: Option<String>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Dataset directory (eeg.csv, events.jsonl, gaze.csv, stimuli.json).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation summary (eval_report.json).
    #[arg(long, value_name = "FILE")]
    eval: Option<PathBuf>,
    /// ERP report.
    #[arg(long, value_name = "FILE")]
    erp: Option<PathBuf>,
    /// Markdown file to write; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Apply `path.to.field=value` overrides through the JSON form of the config.
fn apply_override(value: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not PATH=VALUE"))?;
    let new: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = value;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .with_context(|| format!("unknown config field `{path}`"))?;
    }
    *node = new;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut value = serde_json::to_value(&cfg)?;
    for o in &cli.overrides {
        apply_override(&mut value, o).map_err(|e| CoreError::Config(e.to_string()))?;
    }
    let mut cfg: PipelineConfig =
        serde_json::from_value(value).map_err(|e| CoreError::Config(format!("override: {e}")))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_split(path: &Path) -> Result<SplitSpec> {
    let split: SplitSpec = read_report(path)?;
    split.check_disjoint()?;
    Ok(split)
}

fn split_for(path: &Path, cfg: &PipelineConfig, labels: &BTreeMap<TrialId, ConditionLabel>) -> Result<SplitSpec> {
    if path.exists() {
        return load_split(path);
    }
    let split = make_split(cfg, labels)?;
    write_report(path, &split)?;
    log::info!("wrote new split to {}", path.display());
    Ok(split)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, model: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => Err(CoreError::Config(format!("{model} needs {flag}")).into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            // Synthesis ignores the pipeline config, but a bad one is still an error.
            load_config(&cli)?;
            let mut spec = match &a.spec {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(n) = a.n_trials {
                spec.n_trials = n;
            }
            if a.print_spec {
                spec.validate()?;
                println!("{}", serde_json::to_string_pretty(&spec)?);
                return Ok(());
            }
            let out = a.out.as_deref().expect("clap requires --out");
            let m = synth_dataset(&spec, out)?;
            println!(
                "wrote {} trials ({} control, {} factual, {} contextual) to {}",
                m.n_trials,
                m.class_counts.control,
                m.class_counts.factual_confusion,
                m.class_counts.contextual_confusion,
                out.display()
            );
        }
        Command::PreprocessEeg(a) => {
            let cfg = load_config(&cli)?;
            let labels = labels_from_stimuli(&read_stimuli(&a.stimuli)?);
            let (epochs, report) = pipeline::run_preprocess_eeg(&cfg, &a.eeg, &a.events, &labels)?;
            write_epochs(&epochs, &a.out)?;
            if let Some(r) = &a.report {
                write_report(r, &report)?;
            }
            for w in &report.warnings {
                log::warn!("{w}");
            }
            println!(
                "{} epochs × {} channels × {} samples",
                epochs.n_trials(),
                epochs.n_channels(),
                epochs.n_samples()
            );
        }
        Command::PreprocessGaze(a) => {
            let cfg = load_config(&cli)?;
            let stimuli = read_stimuli(&a.stimuli)?;
            let out = pipeline::run_preprocess_gaze(&cfg, &a.gaze, &stimuli, a.participant.as_deref())?;
            std::fs::create_dir_all(&a.out_dir).with_context(|| a.out_dir.display().to_string())?;
            write_features_csv(&out.features, &a.out_dir.join("gaze_features.csv"))?;
            write_traces(&out.traces, &a.out_dir.join("traces.cfqg"))?;
            write_report(
                &a.out_dir.join("gaze_report.json"),
                &GazeReport {
                    n_trials: stimuli.len(),
                    excluded: out.excluded.clone(),
                    alignments: out.alignments,
                },
            )?;
            println!("{} usable trials, {} excluded", out.traces.len(), out.excluded.len());
        }
        Command::Features(a) => {
            let cfg = load_config(&cli)?;
            let table = pipeline::run_features(&cfg, &read_epochs(&a.epochs)?)?;
            write_features_csv(&table, &a.out)?;
            println!("{} rows × {} features", table.n_rows(), table.n_cols());
        }
        Command::Erp(a) => {
            let cfg = load_config(&cli)?;
            let sets = a.epochs.iter().map(|p| read_epochs(p)).collect::<Result<Vec<_>, _>>()?;
            let report = confuseq_core::erp::erp_report(&sets, &cfg.bands.erp_bands, &cfg.erp)?;
            write_report(&a.out, &report)?;
            for c in &report.comparisons {
                for (i, m) in c.maps.iter().enumerate() {
                    println!("{} participant {}: {:?}", c.name, i + 1, m.significant_channels());
                }
            }
        }
        Command::Train(a) => {
            let cfg = load_config(&cli)?;
            match a.model {
                ModelKind::GbtEeg => {
                    let table = read_features_csv(need(&a.features, "--features", "gbt-eeg")?)?;
                    let split = split_for(&a.split, &cfg, &table_labels(&table))?;
                    let (model, _) = pipeline::train_eeg(&cfg, &table, &split)?;
                    save_model(&Model::Gbt(model), &a.out)?;
                }
                ModelKind::CnnGaze => {
                    let traces = read_traces(need(&a.traces, "--traces", "cnn-gaze")?)?;
                    let split = split_for(&a.split, &cfg, &trace_labels(&traces))?;
                    let (model, log, _) = pipeline::train_gaze(&cfg, &traces, &split)?;
                    save_model(&Model::Cnn(model), &a.out)?;
                    println!("{} epochs, final loss {:.4}", log.epochs_run, log.loss_curve.last().unwrap_or(&f64::NAN));
                }
            }
            println!("model written to {}", a.out.display());
        }
        Command::Evaluate(a) => {
            let cfg = load_config(&cli)?;
            let split = load_split(&a.split)?;
            let (name, probs, labels) = match load_model(&a.model)? {
                Model::Gbt(m) => {
                    let table = read_features_csv(need(&a.features, "--features", "a boosted-tree model")?)?;
                    (m.kind.clone(), pipeline::predict_eeg(&cfg, &m, &table)?, table_labels(&table))
                }
                Model::Cnn(m) => {
                    let traces = read_traces(need(&a.traces, "--traces", "a CNN model")?)?;
                    (m.kind.clone(), pipeline::predict_gaze(&m, &traces)?, trace_labels(&traces))
                }
            };
            let report = pipeline::evaluate(&name, cfg.seed, &probs, &labels, &split)?;
            write_report(&a.out, &report)?;
            if let Some(p) = &a.predictions {
                write_report(p, &probs)?;
            }
            println!("{name}: test balanced accuracy {:.4}", report.test.balanced_accuracy);
        }
        Command::Ensemble(a) => {
            let cfg = load_config(&cli)?;
            let split = load_split(&a.split)?;
            let labels = labels_from_stimuli(&read_stimuli(&a.stimuli)?);
            let eeg: BTreeMap<TrialId, f64> = read_report(&a.eeg)?;
            let eye: BTreeMap<TrialId, f64> = read_report(&a.eye)?;
            let (report, fused) = pipeline::run_ensemble(&cfg, &eeg, &eye, &labels, &split)?;
            write_report(&a.out, &report)?;
            if let Some(p) = &a.fused {
                write_report(p, &fused)?;
            }
            println!("ensemble: test balanced accuracy {:.4}", report.test.balanced_accuracy);
        }
        Command::Align(a) => {
            let cfg = load_config(&cli)?;
            let stimuli = read_stimuli(&a.stimuli)?;
            let out = pipeline::run_preprocess_gaze(&cfg, &a.gaze, &stimuli, a.participant.as_deref())?;
            write_report(&a.out, &out.alignments)?;
            println!("aligned {} trials", out.alignments.len());
        }
        Command::Pipeline(a) => {
            let cfg = load_config(&cli)?;
            let outcome = pipeline::run_pipeline(&cfg, &a.data, &a.out)?;
            let e = &outcome.eval;
            println!(
                "test balanced accuracy: EEG {:.4}, gaze {:.4}, ensemble {:.4}",
                e.eeg.test.balanced_accuracy, e.gaze.test.balanced_accuracy, e.ensemble.test.balanced_accuracy
            );
            println!("artifacts and manifest in {}", a.out.display());
        }
        Command::Report(a) => {
            if a.eval.is_none() && a.erp.is_none() {
                bail!(CoreError::Config("report needs --eval and/or --erp".into()));
            }
            let eval: Option<EvalSummary> = a.eval.as_deref().map(read_report).transpose()?;
            let erp = a.erp.as_deref().map(read_report).transpose()?;
            let text = confuseq_core::report::markdown_summary(eval.as_ref(), erp.as_ref());
            match &a.out {
                Some(p) => std::fs::write(p, text).with_context(|| p.display().to_string())?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>().map(|e| e.class()) {
        Some(ErrorClass::Usage) => 1,
        Some(ErrorClass::Numerical) => 3,
        Some(ErrorClass::Data) | None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
