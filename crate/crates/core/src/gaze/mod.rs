//! Gaze cleaning, reading-cluster selection, gaze features, CNN traces and
//! word alignment.

mod dbscan;
mod fixation;

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan, NOISE};
pub use fixation::{detect_fixations, Fixation};

use crate::config::GazeConfig;
use crate::error::{Error, Result};
use crate::io::TraceSet;
use crate::model::{ConditionLabel, FeatureTable, GazeSample, GazeStream, RowKey, StimulusTrial, TrialId};

/// Length of each resampled CNN input channel.
pub const TRACE_LEN: usize = 1000;

pub fn filter_confidence(samples: &[GazeSample], threshold: f64) -> Vec<GazeSample> {
    samples.iter().copied().filter(|s| s.c >= threshold).collect()
}

/// |mean of the first ⌊n/2⌋ values − mean of the rest|.
pub fn vertical_uniformity(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::invalid("vertical uniformity needs at least two samples"));
    }
    let h = y.len() / 2;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&y[..h]) - mean(&y[h..])).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeCluster {
    /// Indices into the filtered samples, in time order.
    pub members: Vec<usize>,
    pub size: usize,
    pub uniformity: f64,
    pub score: f64,
}

/// Clusters from DBSCAN labels, scored as n·w_size − u·w_uniformity.
pub fn build_clusters(samples: &[GazeSample], labels: &[i32], w_size: f64, w_uniformity: f64) -> Vec<GazeCluster> {
    let k = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            members[l as usize].push(i);
        }
    }
    members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let y: Vec<f64> = m.iter().map(|&i| samples[i].y).collect();
            let u = vertical_uniformity(&y).unwrap_or(0.0);
            GazeCluster {
                size: m.len(),
                score: m.len() as f64 * w_size - u * w_uniformity,
                uniformity: u,
                members: m,
            }
        })
        .collect()
}

/// Index of the best-scoring cluster; ties go to the larger cluster, then the
/// lower index.
pub fn select_cluster(clusters: &[GazeCluster]) -> Result<usize> {
    (0..clusters.len())
        .reduce(|best, i| {
            let (a, b) = (&clusters[best], &clusters[i]);
            if b.score > a.score || (b.score == a.score && b.size > a.size) {
                i
            } else {
                best
            }
        })
        .ok_or_else(|| Error::invalid("no gaze cluster: trial unusable"))
}

/// Shannon entropy (bits) of the point distribution over a grid × grid partition
/// of the unit square.
pub fn gaze_entropy(points: &[(f64, f64)], grid: usize) -> f64 {
    if points.is_empty() || grid == 0 {
        return 0.0;
    }
    let idx = |v: f64| ((v * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    let mut counts = vec![0usize; grid * grid];
    for &(x, y) in points {
        counts[idx(y) * grid + idx(x)] += 1;
    }
    let n = points.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeFeatureVector {
    pub n_fixations: f64,
    pub mean_fixation_duration: f64,
    pub total_fixation_time: f64,
    pub mean_velocity: f64,
    pub max_velocity: f64,
    pub stationary_entropy: f64,
    pub n_clusters: f64,
    pub selected_cluster_fraction: f64,
    pub selected_u: f64,
    pub vertical_range: f64,
}

impl GazeFeatureVector {
    pub const NAMES: [&'static str; 10] = [
        "n_fixations",
        "mean_fixation_duration",
        "total_fixation_time",
        "mean_velocity",
        "max_velocity",
        "stationary_entropy",
        "n_clusters",
        "selected_cluster_fraction",
        "selected_u",
        "vertical_range",
    ];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.n_fixations,
            self.mean_fixation_duration,
            self.total_fixation_time,
            self.mean_velocity,
            self.max_velocity,
            self.stationary_entropy,
            self.n_clusters,
            self.selected_cluster_fraction,
            self.selected_u,
            self.vertical_range,
        ]
    }
}

/// Per-sample speeds (normalized units/s); pairs with Δt ≤ 0 are skipped.
fn velocities(samples: &[GazeSample]) -> Vec<f64> {
    samples
        .windows(2)
        .filter(|w| w[1].t > w[0].t)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y) / (w[1].t - w[0].t))
        .collect()
}

/// Gaze features of a confidence-filtered trial given its clusters and the
/// selected one.
pub fn extract_gaze_features(
    samples: &[GazeSample],
    clusters: &[GazeCluster],
    selected: usize,
    cfg: &GazeConfig,
) -> Result<GazeFeatureVector> {
    if samples.is_empty() {
        return Err(Error::invalid("no gaze samples after filtering: trial unusable"));
    }
    let sel = clusters
        .get(selected)
        .ok_or_else(|| Error::invalid("selected cluster out of range"))?;
    let fix = detect_fixations(samples, cfg.fixation_dispersion, cfg.fixation_min_duration_s);
    let total: f64 = fix.iter().map(|f| f.duration_s).sum();
    let v = velocities(samples);
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.x, s.y)).collect();
    let (ylo, yhi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.y), hi.max(s.y)));
    Ok(GazeFeatureVector {
        n_fixations: fix.len() as f64,
        mean_fixation_duration: if fix.is_empty() { 0.0 } else { total / fix.len() as f64 },
        total_fixation_time: total,
        mean_velocity: if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 },
        max_velocity: v.iter().copied().fold(0.0, f64::max),
        stationary_entropy: gaze_entropy(&points, cfg.entropy_grid),
        n_clusters: clusters.len() as f64,
        selected_cluster_fraction: sel.size as f64 / samples.len() as f64,
        selected_u: sel.uniformity,
        vertical_range: yhi - ylo,
    })
}

/// Linear interpolation of x(t), y(t) onto `out_len` uniform points spanning
/// the first to the last sample.
pub fn resample_linear(samples: &[GazeSample], out_len: usize) -> Result<Array2<f64>> {
    if samples.len() < 2 {
        return Err(Error::invalid("resampling needs at least two samples"));
    }
    let (t0, t1) = (samples[0].t, samples[samples.len() - 1].t);
    let mut out = Array2::zeros((2, out_len));
    let mut k = 0;
    for i in 0..out_len {
        let t = if out_len == 1 {
            t0
        } else {
            t0 + (t1 - t0) * i as f64 / (out_len - 1) as f64
        };
        while k + 2 < samples.len() && samples[k + 1].t <= t {
            k += 1;
        }
        let (a, b) = (&samples[k], &samples[k + 1]);
        let dt = b.t - a.t;
        let w = if dt > 0.0 { ((t - a.t) / dt).clamp(0.0, 1.0) } else { 1.0 };
        out[[0, i]] = a.x + w * (b.x - a.x);
        out[[1, i]] = a.y + w * (b.y - a.y);
    }
    Ok(out)
}

/// Per-row z-score with population std; constant rows become zeros.
pub fn zscore_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            row.mapv_inplace(|v| (v - mean) / sd);
        } else {
            row.fill(0.0);
        }
    }
}

/// 2 × out_len CNN input from the selected-cluster samples.
pub fn resample_trace(samples: &[GazeSample], out_len: usize) -> Result<Array2<f64>> {
    let mut m = resample_linear(samples, out_len)?;
    zscore_rows(&mut m);
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordStat {
    pub text: String,
    pub fixation_count: usize,
    pub total_duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub trial_id: TrialId,
    pub words: Vec<WordStat>,
    pub unassigned: usize,
}

/// Word index for a point: the first box containing it, else the nearest box
/// within `tolerance` (ties to the lower index).
pub fn word_at(stimulus: &StimulusTrial, x: f64, y: f64, tolerance: f64) -> Option<usize> {
    if let Some(i) = stimulus.words.iter().position(|w| w.bbox.contains(x, y)) {
        return Some(i);
    }
    stimulus
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| (i, w.bbox.distance(x, y)))
        .filter(|&(_, d)| d <= tolerance)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

pub fn align_to_words(fixations: &[Fixation], stimulus: &StimulusTrial, tolerance: f64) -> WordAlignment {
    let mut words: Vec<WordStat> = stimulus
        .words
        .iter()
        .map(|w| WordStat {
            text: w.text.clone(),
            fixation_count: 0,
            total_duration_s: 0.0,
        })
        .collect();
    let mut unassigned = 0;
    for f in fixations {
        match word_at(stimulus, f.x, f.y, tolerance) {
            Some(i) => {
                words[i].fixation_count += 1;
                words[i].total_duration_s += f.duration_s;
            }
            None => unassigned += 1,
        }
    }
    WordAlignment {
        trial_id: stimulus.id,
        words,
        unassigned,
    }
}

/// Everything derived from one usable trial.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeTrial {
    pub trial_id: TrialId,
    pub n_filtered: usize,
    pub clusters: Vec<GazeCluster>,
    pub selected: usize,
    pub fixations: Vec<Fixation>,
    pub features: GazeFeatureVector,
    pub trace: Array2<f64>,
}

/// Filter, cluster, select, featurize and resample one trial. An error means
/// the trial is unusable.
pub fn process_trial(stream: &GazeStream, cfg: &GazeConfig) -> Result<GazeTrial> {
    let samples = filter_confidence(stream.samples(), cfg.confidence_threshold);
    if samples.is_empty() {
        return Err(Error::invalid("no samples above the confidence threshold"));
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.x, s.y)).collect();
    let labels = dbscan(&points, cfg.dbscan_eps, cfg.dbscan_min_pts);
    let clusters = build_clusters(&samples, &labels, cfg.w_size, cfg.w_uniformity);
    let selected = select_cluster(&clusters)?;
    let features = extract_gaze_features(&samples, &clusters, selected, cfg)?;
    let member_samples: Vec<GazeSample> = clusters[selected].members.iter().map(|&i| samples[i]).collect();
    let trace = resample_trace(&member_samples, TRACE_LEN)?;
    Ok(GazeTrial {
        trial_id: stream.trial_id(),
        n_filtered: samples.len(),
        fixations: detect_fixations(&samples, cfg.fixation_dispersion, cfg.fixation_min_duration_s),
        clusters,
        selected,
        features,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTrial {
    pub trial_id: TrialId,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GazeOutput {
    pub features: FeatureTable,
    pub traces: TraceSet,
    pub alignments: Vec<WordAlignment>,
    pub excluded: Vec<ExcludedTrial>,
}

/// Gaze preprocessing for one participant. Labels come from the stimuli;
/// trials without a usable cluster are excluded and reported.
pub fn preprocess_gaze(
    streams: &[GazeStream],
    stimuli: &[StimulusTrial],
    cfg: &GazeConfig,
    participant: Option<&str>,
) -> Result<GazeOutput> {
    let cfg = cfg.for_participant(participant);
    let by_id: BTreeMap<TrialId, &StimulusTrial> = stimuli.iter().map(|s| (s.id, s)).collect();
    let unknown: Vec<TrialId> = streams.iter().map(|s| s.trial_id()).filter(|t| !by_id.contains_key(t)).collect();
    if !unknown.is_empty() {
        return Err(Error::invalid(format!("gaze trials without stimulus: {unknown:?}")));
    }
    let results: Vec<(TrialId, Result<GazeTrial>)> =
        streams.par_iter().map(|s| (s.trial_id(), process_trial(s, &cfg))).collect();

    let mut excluded = Vec::new();
    let mut usable = Vec::new();
    let have: std::collections::BTreeSet<TrialId> = streams.iter().map(|s| s.trial_id()).collect();
    for s in stimuli {
        if !have.contains(&s.id) {
            excluded.push(ExcludedTrial {
                trial_id: s.id,
                reason: "no gaze samples".into(),
            });
        }
    }
    for (id, r) in results {
        match r {
            Ok(t) => usable.push(t),
            Err(e) => {
                log::warn!("gaze trial {id} unusable: {e}");
                excluded.push(ExcludedTrial {
                    trial_id: id,
                    reason: e.to_string(),
                });
            }
        }
    }
    excluded.sort_by_key(|e| e.trial_id);

    let labels: Vec<ConditionLabel> = usable.iter().map(|t| by_id[&t.trial_id].class).collect();
    let keys: Vec<RowKey> = usable
        .iter()
        .map(|t| RowKey {
            trial_id: t.trial_id,
            window: None,
        })
        .collect();
    let values: Vec<f64> = usable.iter().flat_map(|t| t.features.to_vec()).collect();
    let features = FeatureTable::new(
        GazeFeatureVector::NAMES.iter().map(|s| s.to_string()).collect(),
        keys,
        labels.clone(),
        values,
    )?;
    let mut data = Array3::zeros((usable.len(), 2, TRACE_LEN));
    for (i, t) in usable.iter().enumerate() {
        data.index_axis_mut(Axis(0), i).assign(&t.trace);
    }
    let traces = TraceSet::new(usable.iter().map(|t| t.trial_id).collect(), labels, data)?;
    let alignments = usable
        .iter()
        .map(|t| align_to_words(&t.fixations, by_id[&t.trial_id], cfg.align_tolerance))
        .collect();
    Ok(GazeOutput {
        features,
        traces,
        alignments,
        excluded,
    })
}
