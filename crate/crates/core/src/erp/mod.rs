//! Trial-averaged ERPs, N400-window band power and per-channel significance.

mod stats;

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stats::{f_survival, incomplete_beta, one_way_anova, AnovaResult};

use crate::config::{Band, BandCorrection, ErpConfig};
use crate::dsp::{self, averaged_periodogram, band_power, FilterKind, Window};
use crate::error::{Error, Result};
use crate::model::{samples_for, ConditionLabel, EpochSet};

#[derive(Clone, Debug, PartialEq)]
pub struct ErpWaveform {
    pub condition: ConditionLabel,
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    pub n_trials: usize,
    /// channels × samples covering the first second after onset
    pub data: Array2<f64>,
}

/// Mean over the trials of `condition`, low-passed, cropped to the first second.
pub fn average_erp(epochs: &EpochSet, condition: ConditionLabel, cfg: &ErpConfig) -> Result<ErpWaveform> {
    let idx: Vec<usize> = (0..epochs.n_trials()).filter(|&i| epochs.labels()[i] == condition).collect();
    if idx.is_empty() {
        return Err(Error::invalid(format!("no trials of condition {condition}")));
    }
    let mut mean = Array2::<f64>::zeros((epochs.n_channels(), epochs.n_samples()));
    for &i in &idx {
        mean += &epochs.epochs().index_axis(Axis(0), i);
    }
    mean /= idx.len() as f64;
    let lp = dsp::design_fir(
        FilterKind::Lowpass,
        &[cfg.lowpass_hz],
        cfg.lowpass_transition_hz,
        epochs.sample_rate_hz(),
    )?;
    dsp::filter_rows(std::slice::from_ref(&lp), &mut mean)?;
    let keep = samples_for(1.0, epochs.sample_rate_hz()).min(epochs.n_samples());
    Ok(ErpWaveform {
        condition,
        channels: epochs.channels().to_vec(),
        sample_rate_hz: epochs.sample_rate_hz(),
        n_trials: idx.len(),
        data: mean.slice(s![.., ..keep]).to_owned(),
    })
}

/// Block means reducing each channel to `points` values.
pub fn downsample(data: &Array2<f64>, points: usize) -> Array2<f64> {
    let n = data.ncols();
    let points = points.min(n).max(1);
    Array2::from_shape_fn((data.nrows(), points), |(c, i)| {
        let (a, b) = (i * n / points, ((i + 1) * n / points).max(i * n / points + 1));
        data.slice(s![c, a..b]).mean().unwrap()
    })
}

/// Sample range [start, end) of the N400 window.
pub fn n400_range(window_s: (f64, f64), sample_rate_hz: f64) -> (usize, usize) {
    (
        samples_for(window_s.0, sample_rate_hz),
        samples_for(window_s.1, sample_rate_hz),
    )
}

/// Band power of the N400 slice for every trial × channel × band.
///
/// The slice is ~50 samples, too short for Welch averaging; each slice gets a
/// single rectangular-window periodogram zero-padded to a ≤ 1 Hz grid.
pub fn n400_band_power(epochs: &EpochSet, window_s: (f64, f64), bands: &[Band]) -> Result<Array3<f64>> {
    let rate = epochs.sample_rate_hz();
    let (a, b) = n400_range(window_s, rate);
    if b > epochs.n_samples() || a >= b {
        return Err(Error::invalid(format!(
            "N400 window {window_s:?} s does not fit a {}-sample epoch",
            epochs.n_samples()
        )));
    }
    if b - a < 2 {
        return Err(Error::invalid("N400 window shorter than 2 samples"));
    }
    let nfft = (b - a).max(rate.ceil() as usize).next_power_of_two();
    let (t, c) = (epochs.n_trials(), epochs.n_channels());
    let data = epochs.epochs();
    let rows: Vec<Vec<f64>> = (0..t * c)
        .into_par_iter()
        .map(|k| {
            let slice = data.slice(s![k / c, k % c, a..b]).to_vec();
            let spec = averaged_periodogram(&slice, rate, slice.len(), nfft, 0.0, Window::Rectangular)?;
            bands.iter().map(|band| band_power(&spec, band.lo_hz, band.hi_hz)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(Array3::from_shape_fn((t, c, bands.len()), |(i, j, m)| rows[i * c + j][m]))
}

/// A named comparison: each group pools one or more conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub groups: Vec<Vec<ConditionLabel>>,
}

pub fn default_comparisons() -> Vec<Comparison> {
    use ConditionLabel::*;
    vec![
        Comparison {
            name: "factual_vs_control".into(),
            groups: vec![vec![FactualConfusion], vec![Control]],
        },
        Comparison {
            name: "contextual_vs_control".into(),
            groups: vec![vec![ContextualConfusion], vec![Control]],
        },
        Comparison {
            name: "confusion_vs_control".into(),
            groups: vec![vec![FactualConfusion, ContextualConfusion], vec![Control]],
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub band: String,
    pub f: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSignificance {
    pub channel: String,
    pub bands: Vec<BandStat>,
    /// F of the band with the smallest p.
    pub f: f64,
    /// Smallest band p, corrected if configured.
    pub p: f64,
    pub significant: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMap {
    pub alpha: f64,
    pub correction: BandCorrection,
    pub channels: Vec<ChannelSignificance>,
}

impl SignificanceMap {
    pub fn significant_channels(&self) -> Vec<&str> {
        self.channels.iter().filter(|c| c.significant).map(|c| c.channel.as_str()).collect()
    }

    pub fn significant_fraction(&self) -> f64 {
        self.significant_channels().len() as f64 / self.channels.len().max(1) as f64
    }
}

/// Infinite F (zero within-group variance) is reported as the largest finite double.
fn finite(f: f64) -> f64 {
    if f.is_infinite() {
        f64::MAX
    } else {
        f
    }
}

/// Per-channel one-way ANOVA of N400 band power across the condition groups.
/// A channel is significant when its (optionally corrected) minimum band p is
/// below `alpha`. ANOVA failures are recorded per channel.
pub fn significance_map(
    epochs: &EpochSet,
    groups: &[Vec<ConditionLabel>],
    bands: &[Band],
    cfg: &ErpConfig,
) -> Result<SignificanceMap> {
    if groups.len() < 2 {
        return Err(Error::invalid("significance map needs at least two groups"));
    }
    let members: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| (0..epochs.n_trials()).filter(|&i| g.contains(&epochs.labels()[i])).collect())
        .collect();
    for (g, m) in groups.iter().zip(&members) {
        if m.len() < 2 {
            return Err(Error::invalid(format!("group {g:?} has {} trial(s); need ≥ 2", m.len())));
        }
    }
    let power = n400_band_power(epochs, (cfg.window_start_s, cfg.window_end_s), bands)?;
    let channels = (0..epochs.n_channels())
        .into_par_iter()
        .map(|c| {
            let mut stats = Vec::with_capacity(bands.len());
            let mut error = None;
            for (b, band) in bands.iter().enumerate() {
                let values: Vec<Vec<f64>> = members
                    .iter()
                    .map(|m| m.iter().map(|&i| power[[i, c, b]]).collect())
                    .collect();
                match one_way_anova(&values) {
                    Ok(r) => stats.push(BandStat {
                        band: band.name.clone(),
                        f: finite(r.f),
                        p: r.p,
                    }),
                    Err(e) => {
                        error = Some(format!("{}: {e}", band.name));
                        stats.push(BandStat {
                            band: band.name.clone(),
                            f: 0.0,
                            p: 1.0,
                        });
                    }
                }
            }
            let best = (0..stats.len()).min_by(|&a, &b| stats[a].p.total_cmp(&stats[b].p));
            let (f, raw_p) = best.map(|i| (stats[i].f, stats[i].p)).unwrap_or((0.0, 1.0));
            let p = match cfg.band_correction {
                BandCorrection::None => raw_p,
                BandCorrection::Bonferroni => (raw_p * bands.len() as f64).min(1.0),
            };
            ChannelSignificance {
                channel: epochs.channels()[c].clone(),
                bands: stats,
                f,
                p,
                significant: p < cfg.alpha,
                error,
            }
        })
        .collect();
    Ok(SignificanceMap {
        alpha: cfg.alpha,
        correction: cfg.band_correction,
        channels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCounts {
    pub n_maps: usize,
    pub channels: Vec<String>,
    pub counts: Vec<usize>,
}

/// Per channel, the number of maps in which it is significant.
pub fn aggregate_significance(maps: &[SignificanceMap]) -> Result<SignificanceCounts> {
    let first = maps.first().ok_or_else(|| Error::invalid("no significance maps to aggregate"))?;
    let channels: Vec<String> = first.channels.iter().map(|c| c.channel.clone()).collect();
    let mut counts = vec![0; channels.len()];
    for m in maps {
        if m.channels.len() != channels.len() || m.channels.iter().zip(&channels).any(|(c, n)| &c.channel != n) {
            return Err(Error::invalid("significance maps use different channel montages"));
        }
        for (k, c) in m.channels.iter().enumerate() {
            counts[k] += c.significant as usize;
        }
    }
    Ok(SignificanceCounts {
        n_maps: maps.len(),
        channels,
        counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformSummary {
    pub condition: ConditionLabel,
    pub n_trials: usize,
    pub points_per_second: usize,
    /// channel → downsampled trace
    pub channels: Vec<(String, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub name: String,
    pub groups: Vec<Vec<ConditionLabel>>,
    /// One map per participant, in input order.
    pub maps: Vec<SignificanceMap>,
    pub counts: SignificanceCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErpReport {
    pub n_participants: usize,
    pub window_s: (f64, f64),
    pub bands: Vec<Band>,
    /// Waveforms per participant, per condition present.
    pub waveforms: Vec<Vec<WaveformSummary>>,
    pub comparisons: Vec<ComparisonResult>,
}

/// Waveforms and significance maps for one or more participants.
pub fn erp_report(participants: &[EpochSet], bands: &[Band], cfg: &ErpConfig) -> Result<ErpReport> {
    if participants.is_empty() {
        return Err(Error::invalid("no epochs given"));
    }
    let mut waveforms = Vec::new();
    for e in participants {
        let mut per = Vec::new();
        for cond in ConditionLabel::ALL {
            if !e.labels().contains(&cond) {
                continue;
            }
            let w = average_erp(e, cond, cfg)?;
            let d = downsample(&w.data, cfg.waveform_points);
            per.push(WaveformSummary {
                condition: cond,
                n_trials: w.n_trials,
                points_per_second: d.ncols(),
                channels: w.channels.iter().cloned().zip(d.outer_iter().map(|r| r.to_vec())).collect(),
            });
        }
        waveforms.push(per);
    }
    let mut comparisons = Vec::new();
    for cmp in default_comparisons() {
        let maps = participants
            .iter()
            .map(|e| significance_map(e, &cmp.groups, bands, cfg))
            .collect::<Result<Vec<_>>>()?;
        let counts = aggregate_significance(&maps)?;
        comparisons.push(ComparisonResult {
            name: cmp.name,
            groups: cmp.groups,
            maps,
            counts,
        });
    }
    Ok(ErpReport {
        n_participants: participants.len(),
        window_s: (cfg.window_start_s, cfg.window_end_s),
        bands: bands.to_vec(),
        waveforms,
        comparisons,
    })
}
