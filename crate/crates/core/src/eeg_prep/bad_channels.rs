use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::BadChannelConfig;
use crate::error::{Error, Result};
use crate::model::Recording;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelVerdict {
    Good,
    Bad,
    Preflagged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStatus {
    pub channel: String,
    pub abnormal_fraction: f64,
    pub verdict: ChannelVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadChannelReport {
    pub r_low: f64,
    pub r_high: f64,
    pub abnormal_fraction_threshold: f64,
    pub channels: Vec<ChannelStatus>,
}

impl BadChannelReport {
    pub fn good_channels(&self) -> Vec<String> {
        self.channels
            .iter()
            .filter(|c| c.verdict == ChannelVerdict::Good)
            .map(|c| c.channel.clone())
            .collect()
    }

    pub fn excluded_channels(&self) -> Vec<String> {
        self.channels
            .iter()
            .filter(|c| c.verdict != ChannelVerdict::Good)
            .map(|c| c.channel.clone())
            .collect()
    }
}

const CHUNK: usize = 8192;

/// Centered Gram matrix (channels × channels) accumulated in column chunks
/// so that no centered copy of the whole recording is needed.
pub(crate) fn centered_gram(data: ArrayView2<'_, f64>, means: &[f64]) -> Array2<f64> {
    let c = data.nrows();
    let mut gram = Array2::<f64>::zeros((c, c));
    let mut start = 0;
    while start < data.ncols() {
        let end = (start + CHUNK).min(data.ncols());
        let mut block = data.slice(s![.., start..end]).to_owned();
        for (mut row, m) in block.outer_iter_mut().zip(means) {
            row -= *m;
        }
        gram += &block.dot(&block.t());
        start = end;
    }
    gram
}

pub(crate) fn row_means(data: ArrayView2<'_, f64>) -> Vec<f64> {
    data.mean_axis(Axis(1)).expect("nonempty").to_vec()
}

/// Pearson-correlation screen: a channel pair is abnormal unless
/// `r_low < r < r_high`; a channel is bad when more than
/// `abnormal_fraction` of its pairs are abnormal. Zero-variance channels are
/// abnormal with every partner.
pub fn detect_bad_channels(rec: &Recording, cfg: &BadChannelConfig) -> Result<BadChannelReport> {
    let c = rec.n_channels();
    if c < 3 {
        return Err(Error::invalid(format!("bad-channel detection needs ≥ 3 channels, got {c}")));
    }
    if (rec.n_samples() as f64) < 2.0 * rec.sample_rate_hz() {
        return Err(Error::invalid("bad-channel detection needs at least 2 s of data"));
    }
    for p in &cfg.preflagged {
        if rec.channel_index(p).is_none() {
            log::warn!("preflagged channel {p} is not in the recording");
        }
    }
    let data = rec.data();
    let gram = centered_gram(data, &row_means(data));
    let var: Vec<f64> = (0..c).map(|i| gram[[i, i]]).collect();
    let max_var = var.iter().cloned().fold(0.0, f64::max);
    let flat = |v: f64| v <= max_var * 1e-20 || v == 0.0;
    let channels = (0..c)
        .map(|i| {
            let abnormal = (0..c)
                .filter(|&j| j != i)
                .filter(|&j| {
                    if flat(var[i]) || flat(var[j]) {
                        return true;
                    }
                    let r = gram[[i, j]] / (var[i] * var[j]).sqrt();
                    !(cfg.r_low < r && r < cfg.r_high)
                })
                .count();
            let fraction = abnormal as f64 / (c - 1) as f64;
            let name = &rec.channels()[i];
            let verdict = if cfg.preflagged.iter().any(|p| p == name) {
                ChannelVerdict::Preflagged
            } else if fraction > cfg.abnormal_fraction {
                ChannelVerdict::Bad
            } else {
                ChannelVerdict::Good
            };
            ChannelStatus {
                channel: name.clone(),
                abnormal_fraction: fraction,
                verdict,
            }
        })
        .collect();
    Ok(BadChannelReport {
        r_low: cfg.r_low,
        r_high: cfg.r_high,
        abnormal_fraction_threshold: cfg.abnormal_fraction,
        channels,
    })
}
