//! End-to-end run: preprocess-eeg → features → preprocess-gaze → train →
//! evaluate → ensemble → erp.
//!
//! Each stage is also exposed on its own so the CLI can run them separately
//! against files on disk. Artifacts written by a run are byte-identical for
//! identical inputs, config and seed; only the stage timings in the manifest
//! vary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::eeg_features::{build_feature_table, WindowPlan};
use crate::eeg_prep::{preprocess, PrepReport};
use crate::erp::{erp_report, ErpReport};
use crate::error::{Error, Result};
use crate::gaze::{preprocess_gaze, ExcludedTrial, GazeOutput, WordAlignment};
use crate::io::{
    quantize_f32, read_eeg_csv, read_gaze_csv, read_stimuli, write_epochs, write_features_csv, write_report,
    write_traces, TraceSet,
};
use crate::learn::{
    aggregate_by_trial, fuse, predict_gbt, save_model, split_trials, table_matrix, train_cnn, train_gbt, CnnArch,
    CnnModel, EvalReport, FusedPrediction, GbtModel, Model, SplitMetrics, SplitSpec, TrainLog,
};
use crate::model::{ConditionLabel, EpochSet, FeatureTable, RowKey, StimulusTrial, TrialId};
use crate::synth::{sha256_file, DatasetPaths};

pub const STAGES: [&str; 7] = [
    "preprocess-eeg",
    "features",
    "preprocess-gaze",
    "train",
    "evaluate",
    "ensemble",
    "erp",
];

pub const EEG_MODEL: &str = "gbt-eeg";
pub const GAZE_MODEL: &str = "cnn-gaze";
pub const ENSEMBLE_MODEL: &str = "ensemble";

pub fn labels_from_stimuli(stimuli: &[StimulusTrial]) -> BTreeMap<TrialId, ConditionLabel> {
    stimuli.iter().map(|s| (s.id, s.class)).collect()
}

/// Filter, clean, epoch and z-score; epochs are rounded through f32 so the
/// in-memory result equals what the epoch container stores.
pub fn run_preprocess_eeg(
    cfg: &PipelineConfig,
    eeg: &Path,
    events: &Path,
    labels: &BTreeMap<TrialId, ConditionLabel>,
) -> Result<(EpochSet, PrepReport)> {
    let rec = read_eeg_csv(eeg, events)?;
    let (epochs, report) = preprocess(rec, labels, cfg)?;
    let mut data = epochs.epochs().clone();
    quantize_f32(&mut data);
    Ok((epochs.with_epochs(data)?, report))
}

pub fn run_features(cfg: &PipelineConfig, epochs: &EpochSet) -> Result<FeatureTable> {
    let plan = WindowPlan::from_config(&cfg.window, epochs.sample_rate_hz());
    build_feature_table(
        epochs,
        &plan,
        &cfg.bands.feature_bands,
        &cfg.welch,
        cfg.features.channel_subset.as_deref(),
        cfg.features.layout,
    )
}

pub fn run_preprocess_gaze(
    cfg: &PipelineConfig,
    gaze: &Path,
    stimuli: &[StimulusTrial],
    participant: Option<&str>,
) -> Result<GazeOutput> {
    let data = read_gaze_csv(gaze)?;
    if data.clamped > 0 {
        log::warn!("{} gaze samples clamped into the unit square", data.clamped);
    }
    let out = preprocess_gaze(&data.streams, stimuli, &cfg.gaze, participant)?;
    let mut traces = out.traces;
    quantize_f32(&mut traces.data);
    Ok(GazeOutput { traces, ..out })
}

/// Per-trial labels carried by a feature table.
pub fn table_labels(table: &FeatureTable) -> BTreeMap<TrialId, ConditionLabel> {
    table.keys().iter().zip(table.labels()).map(|(k, &l)| (k.trial_id, l)).collect()
}

pub fn trace_labels(traces: &TraceSet) -> BTreeMap<TrialId, ConditionLabel> {
    traces.trial_ids.iter().copied().zip(traces.labels.iter().copied()).collect()
}

/// Seeded trial-wise split over every labelled trial.
pub fn make_split(cfg: &PipelineConfig, labels: &BTreeMap<TrialId, ConditionLabel>) -> Result<SplitSpec> {
    let split = split_trials(labels, cfg.split.train_fraction, cfg.seed, cfg.split.stratified)?;
    split.check_disjoint()?;
    Ok(split)
}

/// Rows of `table` whose trial is in `trials`.
pub fn select_rows(table: &FeatureTable, trials: &BTreeSet<TrialId>) -> FeatureTable {
    table.select_trials(trials)
}

/// Traces whose trial is in `trials`, in their original order.
pub fn select_traces(traces: &TraceSet, trials: &BTreeSet<TrialId>) -> Result<TraceSet> {
    let idx: Vec<usize> = (0..traces.len()).filter(|&i| trials.contains(&traces.trial_ids[i])).collect();
    TraceSet::new(
        idx.iter().map(|&i| traces.trial_ids[i]).collect(),
        idx.iter().map(|&i| traces.labels[i]).collect(),
        traces.data.select(ndarray::Axis(0), &idx),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub test_trials: usize,
    /// Training rows (trial, window) whose trial is in the test set.
    pub leaked_rows: Vec<RowKey>,
    /// Training traces whose trial is in the test set.
    pub leaked_traces: Vec<TrialId>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.leaked_rows.is_empty() && self.leaked_traces.is_empty()
    }
}

/// Check the provenance of the data a model was actually trained on against
/// the test side of the split.
pub fn audit_leakage(split: &SplitSpec, train_rows: &[RowKey], train_traces: &[TrialId]) -> LeakageReport {
    let test = split.test_set();
    LeakageReport {
        test_trials: test.len(),
        leaked_rows: train_rows.iter().copied().filter(|k| test.contains(&k.trial_id)).collect(),
        leaked_traces: train_traces.iter().copied().filter(|t| test.contains(t)).collect(),
    }
}

pub fn train_eeg(cfg: &PipelineConfig, table: &FeatureTable, split: &SplitSpec) -> Result<(GbtModel, Vec<RowKey>)> {
    let train = select_rows(table, &split.train_set());
    let model = train_gbt(
        table_matrix(&train).view(),
        &train.binary_labels(),
        train.columns(),
        &cfg.classifier,
        EEG_MODEL,
        cfg.seed,
    )?;
    Ok((model, train.keys().to_vec()))
}

/// Trains on the traces of training trials; the model is rounded through
/// f32 afterwards so the saved file reproduces it exactly.
pub fn train_gaze(
    cfg: &PipelineConfig,
    traces: &TraceSet,
    split: &SplitSpec,
) -> Result<(CnnModel, TrainLog, Vec<TrialId>)> {
    let train = select_traces(traces, &split.train_set())?;
    if train.is_empty() {
        return Err(Error::invalid("no gaze traces in the training split"));
    }
    let y: Vec<u8> = train.labels.iter().map(|l| l.binary()).collect();
    let (_, channels, len) = train.data.dim();
    let mut model = CnnModel::new(CnnArch::new(channels, len)?, GAZE_MODEL, cfg.seed);
    let log = train_cnn(&mut model, train.data.view(), &y, &cfg.cnn, cfg.seed)?;
    model.quantize_f32();
    Ok((model, log, train.trial_ids))
}

pub fn predict_eeg(cfg: &PipelineConfig, model: &GbtModel, table: &FeatureTable) -> Result<BTreeMap<TrialId, f64>> {
    let p = predict_gbt(model, table_matrix(table).view())?;
    Ok(aggregate_by_trial(table.keys(), &p, cfg.features.window_aggregation))
}

pub fn predict_gaze(model: &CnnModel, traces: &TraceSet) -> Result<BTreeMap<TrialId, f64>> {
    let p = model.predict_proba(traces.data.view())?;
    Ok(traces.trial_ids.iter().copied().zip(p).collect())
}

fn split_metrics(
    probs: &BTreeMap<TrialId, f64>,
    labels: &BTreeMap<TrialId, ConditionLabel>,
    trials: &BTreeSet<TrialId>,
) -> SplitMetrics {
    let (mut y, mut p) = (Vec::new(), Vec::new());
    for (t, &v) in probs {
        if trials.contains(t) {
            y.push(labels[t].binary());
            p.push(v);
        }
    }
    SplitMetrics::new(&y, &p)
}

/// Balanced accuracy etc. on both sides of the split, for trials that have a
/// prediction.
pub fn evaluate(
    model: &str,
    seed: u64,
    probs: &BTreeMap<TrialId, f64>,
    labels: &BTreeMap<TrialId, ConditionLabel>,
    split: &SplitSpec,
) -> Result<EvalReport> {
    if let Some(t) = probs.keys().find(|t| !labels.contains_key(t)) {
        return Err(Error::invalid(format!("prediction for unlabelled trial {t}")));
    }
    Ok(EvalReport {
        model: model.to_string(),
        seed,
        train: split_metrics(probs, labels, &split.train_set()),
        test: split_metrics(probs, labels, &split.test_set()),
        fallback_trials: Vec::new(),
    })
}

pub fn run_ensemble(
    cfg: &PipelineConfig,
    eeg: &BTreeMap<TrialId, f64>,
    eye: &BTreeMap<TrialId, f64>,
    labels: &BTreeMap<TrialId, ConditionLabel>,
    split: &SplitSpec,
) -> Result<(EvalReport, Vec<FusedPrediction>)> {
    let fused = fuse(eeg, eye, cfg.ensemble.w_eeg, cfg.ensemble.w_eye)?;
    let probs: BTreeMap<TrialId, f64> = fused.iter().map(|f| (f.trial_id, f.p)).collect();
    let mut report = evaluate(ENSEMBLE_MODEL, cfg.seed, &probs, labels, split)?;
    report.fallback_trials = fused.iter().filter(|f| f.fallback).map(|f| f.trial_id).collect();
    Ok((report, fused))
}

pub fn run_erp(cfg: &PipelineConfig, epochs: &EpochSet) -> Result<ErpReport> {
    erp_report(std::slice::from_ref(epochs), &cfg.bands.erp_bands, &cfg.erp)
}

/// The three evaluation reports of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub eeg: EvalReport,
    pub gaze: EvalReport,
    pub ensemble: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeReport {
    pub n_trials: usize,
    pub excluded: Vec<ExcludedTrial>,
    pub alignments: Vec<WordAlignment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Succeeded,
    Failed,
    NotRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub stage: String,
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    /// Input file name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
    pub warnings: Vec<String>,
    pub succeeded: bool,
    pub failed_stage: Option<String>,
}

impl RunManifest {
    /// Copy with timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> RunManifest {
        let mut m = self.clone();
        m.stages.iter_mut().for_each(|s| s.seconds = 0.0);
        m
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_FILE: &str = "eval_report.json";
pub const ERP_FILE: &str = "erp_report.json";
pub const SUMMARY_FILE: &str = "summary.md";

/// Artifacts of a successful run, kept in memory for callers.
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub eval: EvalSummary,
    pub erp: ErpReport,
    pub split: SplitSpec,
}

struct Run<'a> {
    out_dir: &'a Path,
    manifest: RunManifest,
}

impl Run<'_> {
    fn record_output(&mut self, stage: &str, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(self.out_dir).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.manifest.outputs.push(OutputRecord {
            stage: stage.to_string(),
            path: rel,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {name}");
        let result = f(self);
        let seconds = start.elapsed().as_secs_f64();
        let rec = self
            .manifest
            .stages
            .iter_mut()
            .find(|s| s.name == name)
            .expect("known stage");
        rec.seconds = seconds;
        match result {
            Ok(v) => {
                rec.status = StageStatus::Succeeded;
                Ok(v)
            }
            Err(e) => {
                rec.status = StageStatus::Failed;
                rec.error = Some(e.to_string());
                self.manifest.failed_stage = Some(name.to_string());
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Run every stage on the dataset in `data_dir` (the layout written by the
/// synthesizer: eeg.csv, events.jsonl, gaze.csv, stimuli.json). The manifest
/// is written even when a stage fails, naming that stage.
pub fn run_pipeline(cfg: &PipelineConfig, data_dir: &Path, out_dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir.join("models")).map_err(|e| Error::io(out_dir, e))?;
    let mut run = Run {
        out_dir,
        manifest: RunManifest {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            inputs: BTreeMap::new(),
            stages: STAGES
                .iter()
                .map(|s| StageRecord {
                    name: s.to_string(),
                    status: StageStatus::NotRun,
                    seconds: 0.0,
                    error: None,
                })
                .collect(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            succeeded: false,
            failed_stage: None,
        },
    };
    let result = run_stages(cfg, data_dir, &mut run);
    run.manifest.succeeded = result.is_ok();
    let manifest_path = run.path(MANIFEST_FILE);
    write_report(&manifest_path, &run.manifest)?;
    let (eval, erp, split) = result?;
    Ok(PipelineOutcome {
        manifest: run.manifest,
        eval,
        erp,
        split,
    })
}

fn run_stages(cfg: &PipelineConfig, data_dir: &Path, run: &mut Run) -> Result<(EvalSummary, ErpReport, SplitSpec)> {
    let inputs = DatasetPaths::new(data_dir);
    for p in [&inputs.eeg, &inputs.events, &inputs.gaze, &inputs.stimuli] {
        if p.exists() {
            let name = p.file_name().expect("file name").to_string_lossy().into_owned();
            run.manifest.inputs.insert(name, sha256_file(p)?);
        }
    }

    let (epochs, labels, stimuli) = run.stage("preprocess-eeg", |run| {
        let stimuli = read_stimuli(&inputs.stimuli)?;
        let labels = labels_from_stimuli(&stimuli);
        let (epochs, report) = run_preprocess_eeg(cfg, &inputs.eeg, &inputs.events, &labels)?;
        run.manifest.warnings.extend(report.warnings.iter().cloned());
        let (p, r) = (run.path("epochs.cfqe"), run.path("prep_report.json"));
        write_epochs(&epochs, &p)?;
        write_report(&r, &report)?;
        run.record_output("preprocess-eeg", &p)?;
        run.record_output("preprocess-eeg", &r)?;
        Ok((epochs, labels, stimuli))
    })?;

    let table = run.stage("features", |run| {
        let table = run_features(cfg, &epochs)?;
        let p = run.path("features.csv");
        write_features_csv(&table, &p)?;
        run.record_output("features", &p)?;
        Ok(table)
    })?;

    let gaze = run.stage("preprocess-gaze", |run| {
        let gaze = run_preprocess_gaze(cfg, &inputs.gaze, &stimuli, None)?;
        for x in &gaze.excluded {
            run.manifest.warnings.push(format!("gaze trial {} excluded: {}", x.trial_id, x.reason));
        }
        let (f, t, r) = (run.path("gaze_features.csv"), run.path("traces.cfqg"), run.path("gaze_report.json"));
        write_features_csv(&gaze.features, &f)?;
        write_traces(&gaze.traces, &t)?;
        write_report(
            &r,
            &GazeReport {
                n_trials: stimuli.len(),
                excluded: gaze.excluded.clone(),
                alignments: gaze.alignments.clone(),
            },
        )?;
        for p in [&f, &t, &r] {
            run.record_output("preprocess-gaze", p)?;
        }
        Ok(gaze)
    })?;

    let (split, gbt, cnn) = run.stage("train", |run| {
        let split = make_split(cfg, &labels)?;
        let (gbt, rows) = train_eeg(cfg, &table, &split)?;
        let (cnn, log, trace_ids) = train_gaze(cfg, &gaze.traces, &split)?;
        let audit = audit_leakage(&split, &rows, &trace_ids);
        if !audit.is_clean() {
            return Err(Error::invalid(format!("train/test leakage detected: {audit:?}")));
        }
        if log.stopped_early {
            log::info!("CNN stopped early after {} epochs", log.epochs_run);
        }
        let (s, g, c, l) = (
            run.path("split.json"),
            run.path("models/gbt-eeg.json"),
            run.path("models/cnn-gaze.cfqn"),
            run.path("cnn_training.json"),
        );
        write_report(&s, &split)?;
        save_model(&Model::Gbt(gbt.clone()), &g)?;
        save_model(&Model::Cnn(cnn.clone()), &c)?;
        write_report(&l, &log)?;
        for p in [&s, &g, &c, &l] {
            run.record_output("train", p)?;
        }
        Ok((split, gbt, cnn))
    })?;

    let (eeg_eval, gaze_eval, p_eeg, p_eye) = run.stage("evaluate", |run| {
        let p_eeg = predict_eeg(cfg, &gbt, &table)?;
        let p_eye = predict_gaze(&cnn, &gaze.traces)?;
        let eeg_eval = evaluate(EEG_MODEL, cfg.seed, &p_eeg, &labels, &split)?;
        let gaze_eval = evaluate(GAZE_MODEL, cfg.seed, &p_eye, &labels, &split)?;
        let p = run.path("predictions.json");
        write_report(&p, &Predictions { eeg: p_eeg.clone(), gaze: p_eye.clone() })?;
        run.record_output("evaluate", &p)?;
        Ok((eeg_eval, gaze_eval, p_eeg, p_eye))
    })?;

    let eval = run.stage("ensemble", |run| {
        let (ens, fused) = run_ensemble(cfg, &p_eeg, &p_eye, &labels, &split)?;
        if !ens.fallback_trials.is_empty() {
            run.manifest
                .warnings
                .push(format!("{} trial(s) scored from EEG only", ens.fallback_trials.len()));
        }
        let eval = EvalSummary {
            eeg: eeg_eval,
            gaze: gaze_eval,
            ensemble: ens,
        };
        let (e, f) = (run.path(EVAL_FILE), run.path("fused_predictions.json"));
        write_report(&e, &eval)?;
        write_report(&f, &fused)?;
        run.record_output("ensemble", &e)?;
        run.record_output("ensemble", &f)?;
        Ok(eval)
    })?;

    let erp = run.stage("erp", |run| {
        let erp = run_erp(cfg, &epochs)?;
        let (e, s) = (run.path(ERP_FILE), run.path(SUMMARY_FILE));
        write_report(&e, &erp)?;
        std::fs::write(&s, crate::report::markdown_summary(Some(&eval), Some(&erp)))
            .map_err(|err| Error::io(&s, err))?;
        run.record_output("erp", &e)?;
        run.record_output("erp", &s)?;
        Ok(erp)
    })?;

    Ok((eval, erp, split))
}

/// Per-trial probabilities of both single-modality models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub eeg: BTreeMap<TrialId, f64>,
    pub gaze: BTreeMap<TrialId, f64>,
}
