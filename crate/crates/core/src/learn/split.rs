//! Trial-wise train/test splitting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionLabel, TrialId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<TrialId>,
    pub test: Vec<TrialId>,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn train_set(&self) -> BTreeSet<TrialId> {
        self.train.iter().copied().collect()
    }

    pub fn test_set(&self) -> BTreeSet<TrialId> {
        self.test.iter().copied().collect()
    }

    /// Errors when a trial appears on both sides.
    pub fn check_disjoint(&self) -> Result<()> {
        let train = self.train_set();
        let both: Vec<TrialId> = self.test.iter().copied().filter(|t| train.contains(t)).collect();
        if both.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("trials in both train and test: {both:?}")))
        }
    }
}

/// Seeded trial-level split; stratified by the binary label when requested.
/// Each stratum keeps round(n·fraction) trials for training, clamped so both
/// sides get at least one trial.
pub fn split_trials(
    labels: &BTreeMap<TrialId, ConditionLabel>,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut strata: BTreeMap<u8, Vec<TrialId>> = BTreeMap::new();
    for (&t, l) in labels {
        strata.entry(l.binary()).or_default().push(t);
    }
    for class in [0u8, 1] {
        let n = strata.get(&class).map_or(0, |v| v.len());
        if n < 2 {
            return Err(Error::invalid(format!("class {class} has {n} trial(s); need ≥ 2 to split")));
        }
    }
    let groups: Vec<Vec<TrialId>> = if stratified {
        strata.into_values().collect()
    } else {
        vec![labels.keys().copied().collect()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut g in groups {
        g.shuffle(&mut rng);
        let k = ((g.len() as f64 * train_fraction).round() as usize).clamp(1, g.len() - 1);
        train.extend_from_slice(&g[..k]);
        test.extend_from_slice(&g[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        test,
        seed,
        stratified,
    })
}
