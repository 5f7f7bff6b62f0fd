//! Domain types shared by every pipeline stage.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards (stages that transform data produce new values).

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TrialId = u32;

/// Experimental condition of a reading trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionLabel {
    Control,
    FactualConfusion,
    ContextualConfusion,
}

impl ConditionLabel {
    pub const ALL: [ConditionLabel; 3] = [
        ConditionLabel::Control,
        ConditionLabel::FactualConfusion,
        ConditionLabel::ContextualConfusion,
    ];

    /// Binary task view: control is 0, either confusion class is 1.
    pub fn binary(self) -> u8 {
        match self {
            ConditionLabel::Control => 0,
            ConditionLabel::FactualConfusion | ConditionLabel::ContextualConfusion => 1,
        }
    }

    pub fn is_confusion(self) -> bool {
        self.binary() == 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionLabel::Control => "control",
            ConditionLabel::FactualConfusion => "factual_confusion",
            ConditionLabel::ContextualConfusion => "contextual_confusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ConditionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trial onset marker in a continuous recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub sample: usize,
    pub trial: TrialId,
}

/// Continuous multi-channel EEG (microvolts), channels × samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    sample_rate_hz: f64,
    channels: Vec<String>,
    data: Array2<f64>,
    events: Vec<Event>,
}

impl Recording {
    pub fn new(
        sample_rate_hz: f64,
        channels: Vec<String>,
        data: Array2<f64>,
        events: Vec<Event>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if data.nrows() != channels.len() {
            return Err(Error::invalid(format!(
                "{} channel names but {} data rows",
                channels.len(),
                data.nrows()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &channels {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate channel name {name}")));
            }
        }
        check_events(&events)?;
        if let Some(last) = events.last() {
            if last.sample >= data.ncols() {
                return Err(Error::invalid(format!(
                    "event for trial {} at sample {} lies past the end of the recording ({} samples)",
                    last.trial,
                    last.sample,
                    data.ncols()
                )));
            }
        }
        Ok(Self {
            sample_rate_hz,
            channels,
            data,
            events,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Same recording with a replaced data matrix of identical shape.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::invalid("replacement data has a different shape"));
        }
        Ok(Self {
            data,
            ..self.clone_meta()
        })
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Keep only the named channels, in the order given.
    pub fn select_channels(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.channel_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown channel {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data = self.data.select(ndarray::Axis(0), &idx);
        Recording::new(self.sample_rate_hz, names.to_vec(), data, self.events.clone())
    }

    fn clone_meta(&self) -> Self {
        Self {
            sample_rate_hz: self.sample_rate_hz,
            channels: self.channels.clone(),
            data: Array2::zeros((0, 0)),
            events: self.events.clone(),
        }
    }
}

pub(crate) fn check_events(events: &[Event]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for pair in events.windows(2) {
        if pair[1].sample <= pair[0].sample {
            return Err(Error::invalid(format!(
                "events not monotone: trial {} at sample {} follows trial {} at sample {}",
                pair[1].trial, pair[1].sample, pair[0].trial, pair[0].sample
            )));
        }
    }
    for e in events {
        if !ids.insert(e.trial) {
            return Err(Error::invalid(format!("duplicate trial id {} in events", e.trial)));
        }
    }
    Ok(())
}

/// Trials × channels × samples tensor with one label per trial.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    epochs: Array3<f64>,
    labels: Vec<ConditionLabel>,
    trial_ids: Vec<TrialId>,
    channels: Vec<String>,
    sample_rate_hz: f64,
    epoch_duration_s: f64,
}

impl EpochSet {
    pub fn new(
        epochs: Array3<f64>,
        labels: Vec<ConditionLabel>,
        trial_ids: Vec<TrialId>,
        channels: Vec<String>,
        sample_rate_hz: f64,
        epoch_duration_s: f64,
    ) -> Result<Self> {
        let (n_trials, n_channels, n_samples) = epochs.dim();
        if labels.len() != n_trials || trial_ids.len() != n_trials {
            return Err(Error::invalid(format!(
                "{n_trials} epochs but {} labels and {} trial ids",
                labels.len(),
                trial_ids.len()
            )));
        }
        if channels.len() != n_channels {
            return Err(Error::invalid("channel names do not match epoch tensor"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let expected = samples_for(epoch_duration_s, sample_rate_hz);
        if expected != n_samples {
            return Err(Error::invalid(format!(
                "epoch of {epoch_duration_s} s at {sample_rate_hz} Hz needs {expected} samples, tensor has {n_samples}"
            )));
        }
        Ok(Self {
            epochs,
            labels,
            trial_ids,
            channels,
            sample_rate_hz,
            epoch_duration_s,
        })
    }

    pub fn epochs(&self) -> &Array3<f64> {
        &self.epochs
    }

    pub fn labels(&self) -> &[ConditionLabel] {
        &self.labels
    }

    pub fn trial_ids(&self) -> &[TrialId] {
        &self.trial_ids
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn epoch_duration_s(&self) -> f64 {
        self.epoch_duration_s
    }

    pub fn n_trials(&self) -> usize {
        self.epochs.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.epochs.dim().1
    }

    pub fn n_samples(&self) -> usize {
        self.epochs.dim().2
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn with_epochs(&self, epochs: Array3<f64>) -> Result<Self> {
        EpochSet::new(
            epochs,
            self.labels.clone(),
            self.trial_ids.clone(),
            self.channels.clone(),
            self.sample_rate_hz,
            self.epoch_duration_s,
        )
    }

    /// Subset of trials, in the given index order.
    pub fn select_trials(&self, idx: &[usize]) -> Result<Self> {
        EpochSet::new(
            self.epochs.select(ndarray::Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.trial_ids[i]).collect(),
            self.channels.clone(),
            self.sample_rate_hz,
            self.epoch_duration_s,
        )
    }
}

pub fn samples_for(duration_s: f64, sample_rate_hz: f64) -> usize {
    (duration_s * sample_rate_hz).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

/// Gaze samples of one trial in normalized screen coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeStream {
    trial_id: TrialId,
    samples: Vec<GazeSample>,
}

impl GazeStream {
    pub fn new(trial_id: TrialId, samples: Vec<GazeSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite() && s.c.is_finite()) {
                return Err(Error::invalid(format!("trial {trial_id}: non-finite gaze sample {i}")));
            }
            if !(0.0..=1.0).contains(&s.x) || !(0.0..=1.0).contains(&s.y) {
                return Err(Error::invalid(format!(
                    "trial {trial_id}: gaze sample {i} outside the unit square"
                )));
            }
            if !(0.0..=1.0).contains(&s.c) {
                return Err(Error::invalid(format!(
                    "trial {trial_id}: confidence {} outside [0,1]",
                    s.c
                )));
            }
        }
        if samples.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::invalid(format!("trial {trial_id}: timestamps decrease")));
        }
        Ok(Self { trial_id, samples })
    }

    pub fn trial_id(&self) -> TrialId {
        self.trial_id
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl WordBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::invalid(format!(
                "degenerate box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Euclidean distance from a point to the box (0 inside).
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(0.0).max(x - self.x_max);
        let dy = (self.y_min - y).max(0.0).max(y - self.y_max);
        dx.hypot(dy)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Word {
    pub text: String,
    pub bbox: WordBox,
}

/// One displayed paragraph with word bounding boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct StimulusTrial {
    pub id: TrialId,
    pub class: ConditionLabel,
    pub words: Vec<Word>,
}

/// Provenance of one feature-table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub trial_id: TrialId,
    /// Window index when rows are per window; `None` for per-trial rows.
    pub window: Option<u32>,
}

/// Flat feature vectors with labels and row provenance (row-major values).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    columns: Vec<String>,
    keys: Vec<RowKey>,
    labels: Vec<ConditionLabel>,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(
        columns: Vec<String>,
        keys: Vec<RowKey>,
        labels: Vec<ConditionLabel>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if keys.len() != labels.len() {
            return Err(Error::invalid("row keys and labels differ in length"));
        }
        if values.len() != keys.len() * columns.len() {
            return Err(Error::invalid(format!(
                "{} values for {} rows × {} columns",
                values.len(),
                keys.len(),
                columns.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i / columns.len().max(1), i % columns.len().max(1));
            return Err(Error::invalid(format!(
                "non-finite feature at row {r} column {}",
                columns[c]
            )));
        }
        let mut seen = BTreeSet::new();
        for k in &keys {
            if !seen.insert(*k) {
                return Err(Error::invalid(format!("duplicate feature row {k:?}")));
            }
        }
        Ok(Self {
            columns,
            keys,
            labels,
            values,
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn labels(&self) -> &[ConditionLabel] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn binary_labels(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.binary()).collect()
    }

    /// Rows whose trial is in `trials`, original order kept.
    pub fn select_trials(&self, trials: &BTreeSet<TrialId>) -> FeatureTable {
        let idx: Vec<usize> = (0..self.n_rows())
            .filter(|&i| trials.contains(&self.keys[i].trial_id))
            .collect();
        let mut values = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in &idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureTable {
            columns: self.columns.clone(),
            keys: idx.iter().map(|&i| self.keys[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            values,
        }
    }

    pub fn trial_ids(&self) -> BTreeSet<TrialId> {
        self.keys.iter().map(|k| k.trial_id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn binary_view_is_fixed() {
        assert_eq!(ConditionLabel::Control.binary(), 0);
        assert_eq!(ConditionLabel::FactualConfusion.binary(), 1);
        assert_eq!(ConditionLabel::ContextualConfusion.binary(), 1);
        for c in ConditionLabel::ALL {
            assert_eq!(ConditionLabel::parse(c.as_str()), Some(c));
        }
    }

    #[test]
    fn recording_rejects_decreasing_events() {
        let data = array![[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]];
        let events = vec![Event { sample: 2, trial: 1 }, Event { sample: 1, trial: 2 }];
        let err = Recording::new(512.0, vec!["a".into(), "b".into()], data, events).unwrap_err();
        assert!(err.to_string().contains("events not monotone"));
    }

    #[test]
    fn recording_rejects_duplicate_trials_and_bad_rate() {
        let data = array![[1.0, 2.0, 3.0, 4.0]];
        let events = vec![Event { sample: 0, trial: 1 }, Event { sample: 2, trial: 1 }];
        assert!(Recording::new(512.0, vec!["a".into()], data.clone(), events).is_err());
        assert!(Recording::new(0.0, vec!["a".into()], data, vec![]).is_err());
    }

    #[test]
    fn word_box_distance() {
        let b = WordBox::new(0.2, 0.4, 0.3, 0.45).unwrap();
        assert_eq!(b.distance(0.25, 0.42), 0.0);
        assert!((b.distance(0.25, 0.46) - 0.01).abs() < 1e-12);
        assert!(WordBox::new(0.2, 0.4, 0.2, 0.5).unwrap_err().to_string().contains("degenerate box"));
    }

    #[test]
    fn feature_table_rejects_nan() {
        let r = FeatureTable::new(
            vec!["a".into()],
            vec![RowKey { trial_id: 1, window: None }],
            vec![ConditionLabel::Control],
            vec![f64::NAN],
        );
        assert!(r.is_err());
    }

    #[test]
    fn epoch_set_checks_sample_count() {
        let e = Array3::<f64>::zeros((1, 1, 10));
        assert!(EpochSet::new(e.clone(), vec![ConditionLabel::Control], vec![1], vec!["a".into()], 10.0, 1.0).is_ok());
        assert!(EpochSet::new(e, vec![ConditionLabel::Control], vec![1], vec!["a".into()], 10.0, 2.0).is_err());
    }
}
