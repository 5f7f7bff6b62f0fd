//! Pipeline configuration.
//!
//! One JSON document governs every stage. Missing fields take the defaults
//! below; unknown fields are rejected so typos do not silently fall back.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub fn new(name: &str, lo_hz: f64, hi_hz: f64) -> Self {
        Self {
            name: name.to_string(),
            lo_hz,
            hi_hz,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub notch_hz: f64,
    /// Half width of the bandstop around `notch_hz` (59–61 Hz by default).
    pub notch_half_width_hz: f64,
    pub notch_transition_hz: f64,
    pub highpass_hz: f64,
    pub highpass_transition_hz: f64,
    pub lowpass_hz: f64,
    pub lowpass_transition_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            notch_hz: 60.0,
            notch_half_width_hz: 1.0,
            notch_transition_hz: 1.0,
            highpass_hz: 1.0,
            highpass_transition_hz: 1.0,
            lowpass_hz: 100.0,
            lowpass_transition_hz: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BadChannelConfig {
    pub r_low: f64,
    pub r_high: f64,
    pub abnormal_fraction: f64,
    pub preflagged: Vec<String>,
}

impl Default for BadChannelConfig {
    fn default() -> Self {
        Self {
            r_low: 0.2,
            r_high: 0.99,
            abnormal_fraction: 0.8,
            preflagged: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaConfig {
    pub enabled: bool,
    pub n_components: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Fit on at most this many (evenly strided) samples.
    pub max_fit_samples: usize,
    pub frontal_channels: Vec<String>,
    pub kurtosis_threshold: f64,
    pub frontal_corr_threshold: f64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_components: 20,
            tol: 1e-4,
            max_iter: 500,
            max_fit_samples: 100_000,
            frontal_channels: vec!["Fp1".into(), "Fp2".into()],
            kurtosis_threshold: 10.0,
            frontal_corr_threshold: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub length_s: f64,
    pub overlap: f64,
    pub n_windows: usize,
    pub analysis_duration_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length_s: 2.0,
            overlap: 0.5,
            n_windows: 4,
            analysis_duration_s: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_len: 512,
            overlap: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    /// Five canonical bands followed by five sub-bands.
    pub feature_bands: Vec<Band>,
    pub erp_bands: Vec<Band>,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            feature_bands: vec![
                Band::new("delta", 0.5, 4.0),
                Band::new("theta", 4.0, 8.0),
                Band::new("alpha", 8.0, 13.0),
                Band::new("beta", 13.0, 30.0),
                Band::new("gamma", 30.0, 45.0),
                Band::new("theta_sub", 4.0, 6.0),
                Band::new("alpha1", 8.0, 10.0),
                Band::new("alpha2", 10.0, 13.0),
                Band::new("beta1", 13.0, 20.0),
                Band::new("beta2", 20.0, 30.0),
            ],
            erp_bands: vec![
                Band::new("alpha", 8.0, 12.0),
                Band::new("beta", 12.0, 30.0),
                Band::new("gamma", 30.0, 45.0),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowLayout {
    /// One row per trial, all windows concatenated.
    Trial,
    /// One row per (trial, window); predictions aggregated per trial.
    Window,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAggregation {
    Mean,
    Majority,
}

pub fn temporal_channels() -> Vec<String> {
    ["T7", "T8", "FT7", "FT8", "TP7", "TP8"].iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// `None` uses every retained channel.
    pub channel_subset: Option<Vec<String>>,
    pub layout: RowLayout,
    pub window_aggregation: WindowAggregation,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channel_subset: Some(temporal_channels()),
            layout: RowLayout::Trial,
            window_aggregation: WindowAggregation::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 60,
            learning_rate: 0.3,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Stop after this many epochs without a training-loss improvement.
    pub patience: usize,
    pub min_delta: f64,
    pub trace_len: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            patience: 10,
            min_delta: 1e-3,
            trace_len: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stratified: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub w_eeg: f64,
    pub w_eye: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { w_eeg: 0.8, w_eye: 0.2 }
    }
}

/// Per-participant overrides of the clustering knobs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeOverride {
    pub confidence_threshold: Option<f64>,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: Option<usize>,
    pub w_size: Option<f64>,
    pub w_uniformity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeConfig {
    pub confidence_threshold: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub w_size: f64,
    pub w_uniformity: f64,
    pub fixation_dispersion: f64,
    pub fixation_min_duration_s: f64,
    pub entropy_grid: usize,
    pub align_tolerance: f64,
    pub participants: BTreeMap<String, GazeOverride>,
}

impl Default for GazeConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.6,
            dbscan_eps: 0.07,
            dbscan_min_pts: 5,
            w_size: 0.01,
            w_uniformity: 1.0,
            fixation_dispersion: 0.02,
            fixation_min_duration_s: 0.1,
            entropy_grid: 8,
            align_tolerance: 0.03,
            participants: BTreeMap::new(),
        }
    }
}

impl GazeConfig {
    /// Configuration with a participant's overrides applied.
    pub fn for_participant(&self, participant: Option<&str>) -> GazeConfig {
        let mut out = self.clone();
        if let Some(o) = participant.and_then(|p| self.participants.get(p)) {
            if let Some(v) = o.confidence_threshold {
                out.confidence_threshold = v;
            }
            if let Some(v) = o.dbscan_eps {
                out.dbscan_eps = v;
            }
            if let Some(v) = o.dbscan_min_pts {
                out.dbscan_min_pts = v;
            }
            if let Some(v) = o.w_size {
                out.w_size = v;
            }
            if let Some(v) = o.w_uniformity {
                out.w_uniformity = v;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandCorrection {
    /// Minimum p over bands, uncorrected.
    None,
    /// Minimum p over bands multiplied by the number of bands (capped at 1).
    Bonferroni,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErpConfig {
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub lowpass_hz: f64,
    pub lowpass_transition_hz: f64,
    pub alpha: f64,
    pub band_correction: BandCorrection,
    pub waveform_points: usize,
}

impl Default for ErpConfig {
    fn default() -> Self {
        Self {
            window_start_s: 0.350,
            window_end_s: 0.450,
            lowpass_hz: 15.0,
            lowpass_transition_hz: 5.0,
            alpha: 0.02,
            band_correction: BandCorrection::None,
            waveform_points: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate_hz: f64,
    pub epoch_duration_s: f64,
    pub filter: FilterConfig,
    pub bad_channels: BadChannelConfig,
    pub ica: IcaConfig,
    pub window: WindowConfig,
    pub welch: WelchConfig,
    pub bands: BandConfig,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub cnn: CnnConfig,
    pub split: SplitConfig,
    pub ensemble: EnsembleConfig,
    pub gaze: GazeConfig,
    pub erp: ErpConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 512.0,
            epoch_duration_s: 10.0,
            filter: FilterConfig::default(),
            bad_channels: BadChannelConfig::default(),
            ica: IcaConfig::default(),
            window: WindowConfig::default(),
            welch: WelchConfig::default(),
            bands: BandConfig::default(),
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            cnn: CnnConfig::default(),
            split: SplitConfig::default(),
            ensemble: EnsembleConfig::default(),
            gaze: GazeConfig::default(),
            erp: ErpConfig::default(),
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical (compact) JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive".into());
        }
        if ((self.ensemble.w_eeg + self.ensemble.w_eye) - 1.0).abs() > 1e-9
            || self.ensemble.w_eeg < 0.0
            || self.ensemble.w_eye < 0.0
        {
            return bad(format!(
                "ensemble weights must be nonnegative and sum to 1 (got {} + {})",
                self.ensemble.w_eeg, self.ensemble.w_eye
            ));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad("split.train_fraction must lie in (0, 1)".into());
        }
        let f = &self.filter;
        for (name, hz) in [
            ("filter.notch_hz", f.notch_hz + f.notch_half_width_hz),
            ("filter.highpass_hz", f.highpass_hz),
            ("filter.lowpass_hz", f.lowpass_hz),
            ("erp.lowpass_hz", self.erp.lowpass_hz),
        ] {
            if !(hz > 0.0 && hz < nyquist) {
                return bad(format!("{name} must lie in (0, {nyquist}) Hz"));
            }
        }
        for b in self.bands.feature_bands.iter().chain(&self.bands.erp_bands) {
            if !(b.lo_hz >= 0.0 && b.lo_hz < b.hi_hz && b.hi_hz <= nyquist) {
                return bad(format!("band {} [{}, {}] invalid", b.name, b.lo_hz, b.hi_hz));
            }
        }
        if self.bands.feature_bands.len() != 10 {
            return bad("bands.feature_bands must hold 10 bands (5 canonical + 5 sub-bands)".into());
        }
        if !(0.0..1.0).contains(&self.window.overlap) || self.window.n_windows == 0 {
            return bad("window.overlap must lie in [0, 1) and n_windows ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.welch.overlap) || self.welch.segment_len < 2 {
            return bad("welch.overlap must lie in [0, 1) and segment_len ≥ 2".into());
        }
        if !(self.erp.window_start_s >= 0.0 && self.erp.window_start_s < self.erp.window_end_s) {
            return bad("erp window must be increasing and nonnegative".into());
        }
        if !(self.erp.alpha > 0.0 && self.erp.alpha < 1.0) {
            return bad("erp.alpha must lie in (0, 1)".into());
        }
        if self.gaze.w_size < 0.0 || self.gaze.w_uniformity < 0.0 {
            return bad("gaze weights must be nonnegative".into());
        }
        if !(self.gaze.dbscan_eps > 0.0) || self.gaze.dbscan_min_pts == 0 {
            return bad("gaze.dbscan_eps must be positive and dbscan_min_pts ≥ 1".into());
        }
        if self.cnn.batch_size == 0 || self.cnn.trace_len < 8 {
            return bad("cnn.batch_size must be ≥ 1 and trace_len ≥ 8".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn partial_document_uses_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 3, "ensemble": {"w_eeg": 0.6, "w_eye": 0.4}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.classifier.n_estimators, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unbalanced_weights_and_unknown_fields() {
        let mut cfg = PipelineConfig::default();
        cfg.ensemble.w_eye = 0.3;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn rejects_filter_above_nyquist() {
        let mut cfg = PipelineConfig::default();
        cfg.filter.lowpass_hz = 300.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn participant_override_applies() {
        let mut cfg = GazeConfig::default();
        cfg.participants.insert(
            "p01".into(),
            GazeOverride {
                dbscan_eps: Some(0.05),
                ..Default::default()
            },
        );
        assert_eq!(cfg.for_participant(Some("p01")).dbscan_eps, 0.05);
        assert_eq!(cfg.for_participant(Some("p02")).dbscan_eps, 0.07);
        assert_eq!(cfg.for_participant(None).dbscan_eps, 0.07);
    }
}
