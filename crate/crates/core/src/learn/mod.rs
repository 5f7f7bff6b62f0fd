//! Trial-wise splitting, gradient-boosted trees, the 1-D CNN, metrics and
//! late fusion.

mod cnn;
mod gbt;
mod metrics;
mod split;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use cnn::{
    bce_with_logits, read_cnn, train_cnn, write_cnn, CnnArch, CnnModel, GradCheck, Mode, TensorCheck, TrainLog, BN_EPS,
    BN_MOMENTUM, CHANNELS, GRAD_NORM_FLOOR, HIDDEN, KERNEL, MODEL_MAGIC,
};
pub use gbt::{predict_gbt, train_gbt, GbtModel, Node, Tree};
pub use metrics::{balanced_accuracy, confusion_matrix, per_class_recall, threshold, EvalReport, SplitMetrics};
pub use split::{split_trials, SplitSpec};

use crate::config::WindowAggregation;
use crate::error::{Error, Result};
use crate::io::{read_report, write_report};
use crate::model::{FeatureTable, RowKey, TrialId};

/// Row-major copy of a feature table's values.
pub fn table_matrix(table: &FeatureTable) -> Array2<f64> {
    Array2::from_shape_vec((table.n_rows(), table.n_cols()), table.values().to_vec()).expect("table shape")
}

/// One probability per trial from per-row probabilities: the mean, or the
/// fraction of rows voting class 1.
pub fn aggregate_by_trial(keys: &[RowKey], probs: &[f64], how: WindowAggregation) -> BTreeMap<TrialId, f64> {
    let mut acc: BTreeMap<TrialId, (f64, usize)> = BTreeMap::new();
    for (k, &p) in keys.iter().zip(probs) {
        let v = match how {
            WindowAggregation::Mean => p,
            WindowAggregation::Majority => (p >= 0.5) as u8 as f64,
        };
        let e = acc.entry(k.trial_id).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect()
}

/// w_eeg·p_eeg + w_eye·p_eye, or p_eeg alone (flagged) without an eye
/// probability.
pub fn ensemble_predict(p_eeg: f64, p_eye: Option<f64>, w_eeg: f64, w_eye: f64) -> Result<(f64, bool)> {
    if (w_eeg + w_eye - 1.0).abs() > 1e-9 || w_eeg < 0.0 || w_eye < 0.0 {
        return Err(Error::invalid(format!("ensemble weights {w_eeg} + {w_eye} must be nonnegative and sum to 1")));
    }
    let unit = |p: f64| (0.0..=1.0).contains(&p);
    if !unit(p_eeg) || p_eye.is_some_and(|p| !unit(p)) {
        return Err(Error::invalid("ensemble probabilities must lie in [0, 1]"));
    }
    Ok(match p_eye {
        Some(q) => (w_eeg * p_eeg + w_eye * q, false),
        None => (p_eeg, true),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub trial_id: TrialId,
    pub p_eeg: f64,
    pub p_eye: Option<f64>,
    pub p: f64,
    pub fallback: bool,
}

/// Fuse per-trial probabilities; every EEG trial gets a prediction.
pub fn fuse(
    eeg: &BTreeMap<TrialId, f64>,
    eye: &BTreeMap<TrialId, f64>,
    w_eeg: f64,
    w_eye: f64,
) -> Result<Vec<FusedPrediction>> {
    eeg.iter()
        .map(|(&t, &pe)| {
            let q = eye.get(&t).copied();
            let (p, fallback) = ensemble_predict(pe, q, w_eeg, w_eye)?;
            if fallback {
                log::warn!("trial {t}: no eye prediction, using EEG only");
            }
            Ok(FusedPrediction {
                trial_id: t,
                p_eeg: pe,
                p_eye: q,
                p,
                fallback,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Gbt(GbtModel),
    Cnn(CnnModel),
}

impl Model {
    pub fn kind(&self) -> &str {
        match self {
            Model::Gbt(m) => &m.kind,
            Model::Cnn(m) => &m.kind,
        }
    }
}

/// GBT models are JSON; CNN models use the binary container.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    match model {
        Model::Gbt(m) => write_report(path, m),
        Model::Cnn(m) => write_cnn(m, path),
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut head = [0u8; 4];
    let n = {
        use std::io::Read;
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        f.read(&mut head).map_err(|e| Error::io(path, e))?
    };
    if n == 4 && &head == MODEL_MAGIC {
        Ok(Model::Cnn(read_cnn(path)?))
    } else {
        Ok(Model::Gbt(read_report(path)?))
    }
}
