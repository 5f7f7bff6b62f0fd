use serde::{Deserialize, Serialize};

/// 2×2 counts indexed [true][predicted].
pub fn confusion_matrix(y: &[u8], yhat: &[u8]) -> [[usize; 2]; 2] {
    assert_eq!(y.len(), yhat.len(), "label and prediction lengths differ");
    let mut m = [[0; 2]; 2];
    for (&a, &b) in y.iter().zip(yhat) {
        m[a.min(1) as usize][b.min(1) as usize] += 1;
    }
    m
}

/// Recall of each class; `None` for a class with no examples.
pub fn per_class_recall(y: &[u8], yhat: &[u8]) -> [Option<f64>; 2] {
    let m = confusion_matrix(y, yhat);
    [0, 1].map(|c| {
        let n = m[c][0] + m[c][1];
        (n > 0).then(|| m[c][c] as f64 / n as f64)
    })
}

/// Unweighted mean recall over the classes present in `y`. Absent classes are
/// skipped with a warning; an empty input gives 0.
pub fn balanced_accuracy(y: &[u8], yhat: &[u8]) -> f64 {
    let recalls: Vec<f64> = per_class_recall(y, yhat).into_iter().flatten().collect();
    if recalls.len() < 2 {
        log::warn!("balanced accuracy over {} class(es) only", recalls.len());
    }
    if recalls.is_empty() {
        return 0.0;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

pub fn threshold(p: &[f64]) -> Vec<u8> {
    p.iter().map(|&v| (v >= 0.5) as u8).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub balanced_accuracy: f64,
    pub recall: [Option<f64>; 2],
    pub confusion: [[usize; 2]; 2],
}

impl SplitMetrics {
    pub fn new(y: &[u8], p: &[f64]) -> Self {
        let yhat = threshold(p);
        Self {
            n: y.len(),
            balanced_accuracy: balanced_accuracy(y, &yhat),
            recall: per_class_recall(y, &yhat),
            confusion: confusion_matrix(y, &yhat),
        }
    }
}

/// Metrics for one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub seed: u64,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    /// Trials scored by a fallback path (ensemble without an eye prediction).
    #[serde(default)]
    pub fallback_trials: Vec<u32>,
}
