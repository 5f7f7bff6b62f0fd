use std::collections::BTreeMap;

use ndarray::{s, Array3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{samples_for, ConditionLabel, EpochSet, Recording, TrialId};

/// Cut one epoch of `duration_s` per event, in event order. Labels come from
/// the stimulus classes keyed by trial id.
pub fn epoch(rec: &Recording, duration_s: f64, labels: &BTreeMap<TrialId, ConditionLabel>) -> Result<EpochSet> {
    let n = samples_for(duration_s, rec.sample_rate_hz());
    if n == 0 {
        return Err(Error::invalid("epoch duration rounds to zero samples"));
    }
    let too_late: Vec<TrialId> = rec
        .events()
        .iter()
        .filter(|e| e.sample + n > rec.n_samples())
        .map(|e| e.trial)
        .collect();
    if !too_late.is_empty() {
        return Err(Error::invalid(format!(
            "epochs of {duration_s} s overrun the recording for trial(s) {too_late:?}"
        )));
    }
    let unlabeled: Vec<TrialId> = rec
        .events()
        .iter()
        .filter(|e| !labels.contains_key(&e.trial))
        .map(|e| e.trial)
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::invalid(format!("no stimulus class for trial(s) {unlabeled:?}")));
    }
    let data = rec.data();
    let mut out = Array3::zeros((rec.events().len(), rec.n_channels(), n));
    for (mut dst, e) in out.outer_iter_mut().zip(rec.events()) {
        dst.assign(&data.slice(s![.., e.sample..e.sample + n]));
    }
    EpochSet::new(
        out,
        rec.events().iter().map(|e| labels[&e.trial]).collect(),
        rec.events().iter().map(|e| e.trial).collect(),
        rec.channels().to_vec(),
        rec.sample_rate_hz(),
        duration_s,
    )
}

/// Per channel, per trial: (x − mean) / population std. Constant channels map to zeros.
pub fn zscore_channels(epochs: &EpochSet) -> EpochSet {
    let mut data = epochs.epochs().clone();
    let trials: Vec<_> = data.axis_iter_mut(Axis(0)).collect();
    trials.into_par_iter().for_each(|mut trial| {
        for mut row in trial.outer_iter_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 0.0 && std > mean.abs() * 1e-12 {
                row.mapv_inplace(|v| (v - mean) / std);
            } else {
                row.fill(0.0);
            }
        }
    });
    epochs.with_epochs(data).expect("shape unchanged")
}
