//! Overlapping windows and the 16 per-window EEG features.
//!
//! Feature order per window: the ten configured band powers (five canonical
//! bands then five sub-bands), mean, standard deviation, excess kurtosis,
//! skewness, mean frequency (PSD centroid) and peak frequency.

use rayon::prelude::*;

use crate::config::{Band, RowLayout, WelchConfig, WindowConfig};
use crate::dsp::{band_power, welch_psd};
use crate::error::{Error, Result};
use crate::model::{samples_for, EpochSet, FeatureTable, RowKey};

pub const N_FEATURES: usize = 16;
pub const MIN_WINDOW: usize = 256;
const MOMENT_NAMES: [&str; 6] = ["mean", "std", "kurtosis", "skewness", "mean_freq", "peak_freq"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub length_samples: usize,
    pub hop_samples: usize,
    pub n_windows: usize,
    pub analysis_samples: usize,
}

impl WindowPlan {
    pub fn from_config(cfg: &WindowConfig, sample_rate_hz: f64) -> Self {
        let length = samples_for(cfg.length_s, sample_rate_hz);
        Self {
            length_samples: length,
            hop_samples: ((length as f64 * (1.0 - cfg.overlap)).round() as usize).max(1),
            n_windows: cfg.n_windows,
            analysis_samples: samples_for(cfg.analysis_duration_s, sample_rate_hz),
        }
    }
}

/// Window ranges starting at 0, hop, 2·hop, …, keeping at most `n_windows`
/// that end within both the epoch and the analysis span.
pub fn plan_windows(epoch_len: usize, plan: &WindowPlan) -> Result<Vec<(usize, usize)>> {
    let limit = epoch_len.min(plan.analysis_samples.max(plan.length_samples));
    if plan.length_samples == 0 || plan.length_samples > epoch_len {
        return Err(Error::invalid(format!(
            "a {}-sample window does not fit a {epoch_len}-sample epoch",
            plan.length_samples
        )));
    }
    Ok((0..plan.n_windows)
        .map(|i| (i * plan.hop_samples, i * plan.hop_samples + plan.length_samples))
        .take_while(|&(_, end)| end <= limit)
        .collect())
}

/// Feature names in output order for a band table.
pub fn feature_names(bands: &[Band]) -> Vec<String> {
    bands
        .iter()
        .map(|b| b.name.clone())
        .chain(MOMENT_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

fn check_bands(bands: &[Band]) -> Result<()> {
    if bands.len() + MOMENT_NAMES.len() != N_FEATURES {
        return Err(Error::Config(format!(
            "{} bands + {} moments ≠ {N_FEATURES} features",
            bands.len(),
            MOMENT_NAMES.len()
        )));
    }
    Ok(())
}

/// The 16 features of one window.
pub fn extract_window_features(
    window: &[f64],
    sample_rate_hz: f64,
    bands: &[Band],
    welch: &WelchConfig,
) -> Result<Vec<f64>> {
    check_bands(bands)?;
    if window.len() < MIN_WINDOW {
        return Err(Error::invalid(format!(
            "window of {} samples is shorter than {MIN_WINDOW}",
            window.len()
        )));
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = Vec::with_capacity(N_FEATURES);
    if lo == hi {
        out.extend(std::iter::repeat_n(0.0, bands.len()));
        out.extend([window[0], 0.0, 0.0, 0.0, 0.0, 0.0]);
        return Ok(out);
    }
    let centered: Vec<f64> = window.iter().map(|v| v - mean).collect();
    let spectrum = welch_psd(&centered, sample_rate_hz, welch.segment_len.min(window.len()), welch.overlap)?;
    for b in bands {
        out.push(band_power(&spectrum, b.lo_hz, b.hi_hz)?);
    }
    let m2 = centered.iter().map(|d| d * d).sum::<f64>() / n;
    let m3 = centered.iter().map(|d| d * d * d).sum::<f64>() / n;
    let m4 = centered.iter().map(|d| (d * d) * (d * d)).sum::<f64>() / n;
    out.push(mean);
    out.push(m2.sqrt());
    out.push(m4 / (m2 * m2) - 3.0);
    out.push(m3 / m2.powf(1.5));
    out.push(spectrum.mean_frequency());
    out.push(spectrum.peak_frequency());
    Ok(out)
}

/// Features for every trial, selected channel and planned window.
///
/// `RowLayout::Trial` yields one row per trial with columns
/// `channel|window|feature`; `RowLayout::Window` yields one row per
/// (trial, window) with columns `channel|feature`.
pub fn build_feature_table(
    epochs: &EpochSet,
    plan: &WindowPlan,
    bands: &[Band],
    welch: &WelchConfig,
    channel_subset: Option<&[String]>,
    layout: RowLayout,
) -> Result<FeatureTable> {
    check_bands(bands)?;
    let channels: Vec<(usize, String)> = match channel_subset {
        Some(names) => names
            .iter()
            .map(|n| {
                epochs
                    .channel_index(n)
                    .map(|i| (i, n.clone()))
                    .ok_or_else(|| Error::invalid(format!("channel {n} not in epochs (excluded or unknown)")))
            })
            .collect::<Result<_>>()?,
        None => epochs.channels().iter().cloned().enumerate().collect(),
    };
    let windows = plan_windows(epochs.n_samples(), plan)?;
    let names = feature_names(bands);
    let rate = epochs.sample_rate_hz();
    let data = epochs.epochs();

    // features[trial][window][channel] → 16 values
    let per_trial: Vec<Vec<Vec<Vec<f64>>>> = (0..epochs.n_trials())
        .into_par_iter()
        .map(|t| {
            windows
                .iter()
                .map(|&(a, b)| {
                    channels
                        .iter()
                        .map(|&(c, _)| {
                            let w = data.slice(ndarray::s![t, c, a..b]).to_vec();
                            extract_window_features(&w, rate, bands, welch)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut keys, mut labels, mut values, mut columns);
    match layout {
        RowLayout::Trial => {
            columns = Vec::new();
            for (_, ch) in &channels {
                for w in 0..windows.len() {
                    columns.extend(names.iter().map(|f| format!("{ch}|{w}|{f}")));
                }
            }
            keys = Vec::new();
            labels = Vec::new();
            values = Vec::new();
            for (t, feats) in per_trial.iter().enumerate() {
                keys.push(RowKey {
                    trial_id: epochs.trial_ids()[t],
                    window: None,
                });
                labels.push(epochs.labels()[t]);
                for c in 0..channels.len() {
                    for w in feats {
                        values.extend_from_slice(&w[c]);
                    }
                }
            }
        }
        RowLayout::Window => {
            columns = channels
                .iter()
                .flat_map(|(_, ch)| names.iter().map(move |f| format!("{ch}|{f}")))
                .collect::<Vec<_>>();
            keys = Vec::new();
            labels = Vec::new();
            values = Vec::new();
            for (t, feats) in per_trial.iter().enumerate() {
                for (w, per_channel) in feats.iter().enumerate() {
                    keys.push(RowKey {
                        trial_id: epochs.trial_ids()[t],
                        window: Some(w as u32),
                    });
                    labels.push(epochs.labels()[t]);
                    for v in per_channel {
                        values.extend_from_slice(v);
                    }
                }
            }
        }
    }
    FeatureTable::new(columns, keys, labels, values)
}
