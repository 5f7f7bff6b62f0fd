//! Synthetic datasets with known, controllable confusion effects.
//!
//! Every random draw comes from a ChaCha stream keyed by (seed, purpose,
//! index), so generation is deterministic regardless of thread scheduling.

mod eeg;
mod gaze;
mod montage;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use eeg::{synth_eeg, SynthEeg};
pub use gaze::{synth_gaze, synth_stimuli, target_word, GazeTruth};
pub use montage::{affected_channels, montage, montage_channels, position};

use crate::error::{Error, Result};
use crate::io::{write_eeg_csv, write_gaze_csv, write_report, write_stimuli};
use crate::model::{ConditionLabel, TrialId};

/// Class proportions of the reference design (control / factual / contextual).
pub const CLASS_PROPORTIONS: [usize; 3] = [120, 99, 81];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegNoise {
    /// Per-channel pink sensor noise (µV rms).
    pub sensor_uv: f64,
    /// Spatially smooth latent sources shared across channels.
    pub n_latent: usize,
    pub latent_uv: f64,
    /// Common-mode (reference) signal shared equally by every channel.
    pub common_uv: f64,
    /// Occipital 10 Hz rhythm (µV rms at its centre).
    pub alpha_uv: f64,
    pub line_uv: f64,
    pub line_hz: f64,
    /// Frontal blink artefacts (peak µV) and their mean rate.
    pub blink_uv: f64,
    pub blink_rate_hz: f64,
}

impl Default for EegNoise {
    fn default() -> Self {
        Self {
            sensor_uv: 2.0,
            n_latent: 20,
            latent_uv: 6.0,
            common_uv: 6.0,
            alpha_uv: 8.0,
            line_uv: 8.0,
            line_hz: 60.0,
            blink_uv: 120.0,
            blink_rate_hz: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeSynth {
    pub rate_hz: f64,
    pub fixation_s: f64,
    pub fixation_sd_s: f64,
    pub saccade_s: f64,
    /// Per-sample positional noise (normalized units).
    pub jitter: f64,
    /// Probability that a fixation is followed by a regression.
    pub regression_prob_confusion: f64,
    pub regression_prob_control: f64,
    /// Dwell on the target word in confusion trials, uniform in [lo, hi] s.
    pub dwell_s: [f64; 2],
    /// Control trials dwell on some word with this probability.
    pub control_dwell_prob: f64,
    pub control_dwell_s: [f64; 2],
    /// Fraction of samples replaced by low-confidence outliers.
    pub outlier_rate: f64,
}

impl Default for GazeSynth {
    fn default() -> Self {
        Self {
            rate_hz: 120.0,
            fixation_s: 0.22,
            fixation_sd_s: 0.05,
            saccade_s: 0.03,
            jitter: 0.0015,
            regression_prob_confusion: 0.12,
            regression_prob_control: 0.05,
            dwell_s: [1.5, 3.0],
            control_dwell_prob: 0.4,
            control_dwell_s: [1.5, 3.0],
            outlier_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Split over the three classes in the 120 / 99 / 81 proportions.
    pub n_trials: usize,
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    pub trial_s: f64,
    /// Rest between consecutive trials; also the crossfade length.
    pub gap_s: f64,
    /// Peak of the negative deflection (µV) on affected channels.
    pub n400_amplitude_uv: f64,
    pub n400_latency_s: f64,
    /// Full width at half maximum of the Gaussian deflection.
    pub n400_width_s: f64,
    pub affected_channels: Vec<String>,
    /// Multiplies the power of the theta component on affected channels in
    /// confusion trials.
    pub theta_gain: f64,
    pub theta_uv: f64,
    pub eeg_noise: EegNoise,
    pub gaze: GazeSynth,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_trials: 300,
            channels: montage_channels(),
            sample_rate_hz: 512.0,
            trial_s: 10.0,
            gap_s: 0.5,
            n400_amplitude_uv: 25.0,
            n400_latency_s: 0.4,
            n400_width_s: 0.1,
            affected_channels: affected_channels(),
            theta_gain: 2.0,
            theta_uv: 3.0,
            eeg_noise: EegNoise::default(),
            gaze: GazeSynth::default(),
            seed: 7,
        }
    }
}

/// Purposes of the independent random streams.
#[derive(Clone, Copy)]
pub(crate) enum Stream {
    Classes = 1,
    Topography = 2,
    Block = 3,
    Stimulus = 4,
    Target = 5,
    Gaze = 6,
}

pub(crate) fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | index);
    rng
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Trials per class (control, factual, contextual), largest-remainder
    /// rounding of the reference proportions.
    pub fn class_counts(&self) -> [usize; 3] {
        let total: usize = CLASS_PROPORTIONS.iter().sum();
        let exact: Vec<f64> = CLASS_PROPORTIONS
            .iter()
            .map(|&p| p as f64 * self.n_trials as f64 / total as f64)
            .collect();
        let mut counts = exact.iter().map(|v| v.floor() as usize).collect::<Vec<_>>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = self.n_trials - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        [counts[0], counts[1], counts[2]]
    }

    /// Seeded class assignment, trial ids 0..n.
    pub fn labels(&self) -> BTreeMap<TrialId, ConditionLabel> {
        use rand::seq::SliceRandom;
        let mut labels = Vec::with_capacity(self.n_trials);
        for (class, n) in ConditionLabel::ALL.into_iter().zip(self.class_counts()) {
            labels.extend(std::iter::repeat_n(class, n));
        }
        labels.shuffle(&mut stream_rng(self.seed, Stream::Classes, 0));
        labels.into_iter().enumerate().map(|(i, l)| (i as TrialId, l)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.class_counts().iter().any(|&n| n < 2) {
            return bad("n_trials too small: every class needs at least 2 trials");
        }
        if !(self.sample_rate_hz > 0.0) || !(self.trial_s > 0.0) || !(self.gap_s > 0.0) {
            return bad("sample_rate_hz, trial_s and gap_s must be positive");
        }
        if self.channels.len() < 3 {
            return bad("need at least 3 channels");
        }
        let n = &self.eeg_noise;
        let g = &self.gaze;
        let nonneg = [
            self.n400_amplitude_uv,
            self.n400_width_s,
            self.theta_gain,
            self.theta_uv,
            n.sensor_uv,
            n.latent_uv,
            n.common_uv,
            n.alpha_uv,
            n.line_uv,
            n.blink_uv,
            n.blink_rate_hz,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("amplitudes, widths and gains must be nonnegative");
        }
        if !(self.n400_latency_s >= 0.0 && self.n400_latency_s < self.trial_s) {
            return bad("n400_latency_s must fall inside the trial");
        }
        if !(n.line_hz > 0.0 && n.line_hz < self.sample_rate_hz / 2.0) {
            return bad("line_hz must be below Nyquist");
        }
        if let Some(c) = self.affected_channels.iter().find(|c| !self.channels.contains(c)) {
            return bad(&format!("affected channel {c} is not in the montage"));
        }
        let probs = [
            g.regression_prob_confusion,
            g.regression_prob_control,
            g.control_dwell_prob,
            g.outlier_rate,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("gaze probabilities must lie in [0, 1]");
        }
        if !(g.rate_hz > 0.0 && g.fixation_s > 0.0 && g.saccade_s > 0.0 && g.jitter >= 0.0 && g.fixation_sd_s >= 0.0) {
            return bad("gaze timing must be positive");
        }
        for [lo, hi] in [g.dwell_s, g.control_dwell_s] {
            if !(lo > 0.0 && lo <= hi) {
                return bad("dwell ranges must satisfy 0 < lo ≤ hi");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub id: TrialId,
    pub class: ConditionLabel,
    pub onset_sample: usize,
    pub n400_injected: bool,
    pub theta_gain: f64,
    pub gaze: GazeTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub control: usize,
    pub factual_confusion: usize,
    pub contextual_confusion: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: SynthSpec,
    pub n_trials: usize,
    pub class_counts: ClassCounts,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
    pub trials: Vec<TrialTruth>,
}

/// Standard file names inside a dataset directory.
pub struct DatasetPaths {
    pub eeg: PathBuf,
    pub events: PathBuf,
    pub gaze: PathBuf,
    pub stimuli: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            eeg: dir.join("eeg.csv"),
            events: dir.join("events.jsonl"),
            gaze: dir.join("gaze.csv"),
            stimuli: dir.join("stimuli.json"),
            manifest: dir.join("manifest.json"),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Write a complete dataset (EEG, events, gaze, stimuli, manifest) to `out_dir`.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = DatasetPaths::new(out_dir);

    let stimuli = synth_stimuli(spec);
    let (streams, gaze_truth) = synth_gaze(spec, &stimuli)?;
    write_stimuli(&stimuli, &paths.stimuli)?;
    write_gaze_csv(&streams, &paths.gaze)?;
    drop(streams);

    let eeg = synth_eeg(spec)?;
    write_eeg_csv(&eeg.recording, &paths.eeg, &paths.events)?;
    let onsets: BTreeMap<TrialId, usize> = eeg.recording.events().iter().map(|e| (e.trial, e.sample)).collect();
    drop(eeg);

    let mut files = BTreeMap::new();
    for p in [&paths.eeg, &paths.events, &paths.gaze, &paths.stimuli] {
        let name = p.file_name().expect("file name").to_string_lossy().into_owned();
        files.insert(name, sha256_file(p)?);
    }
    let counts = spec.class_counts();
    let trials = spec
        .labels()
        .into_iter()
        .zip(gaze_truth)
        .map(|((id, class), gaze)| TrialTruth {
            id,
            class,
            onset_sample: onsets[&id],
            n400_injected: class.is_confusion() && spec.n400_amplitude_uv > 0.0,
            theta_gain: if class.is_confusion() { spec.theta_gain } else { 1.0 },
            gaze,
        })
        .collect();
    let manifest = DatasetManifest {
        spec: spec.clone(),
        n_trials: spec.n_trials,
        class_counts: ClassCounts {
            control: counts[0],
            factual_confusion: counts[1],
            contextual_confusion: counts[2],
        },
        files,
        trials,
    };
    write_report(&paths.manifest, &manifest)?;
    Ok(manifest)
}
