//! Continuous-EEG cleaning: filter → bad channels → ICA → epoch → z-score.

mod bad_channels;
mod epoch;
mod ica;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bad_channels::{detect_bad_channels, BadChannelReport, ChannelStatus, ChannelVerdict};
pub use epoch::{epoch, zscore_channels};
pub use ica::{fit_ica, fit_ica_unchecked, reject_components, ComponentInfo, IcaModel};

use crate::config::PipelineConfig;
use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{ConditionLabel, EpochSet, Recording, TrialId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcaSummary {
    pub n_components: usize,
    pub iterations: usize,
    pub components: Vec<ComponentInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub bad_channels: BadChannelReport,
    pub retained_channels: Vec<String>,
    pub ica: Option<IcaSummary>,
    pub warnings: Vec<String>,
}

/// Zero-phase filter every channel with the configured notch/highpass/lowpass chain.
pub fn filter_recording(rec: Recording, cfg: &PipelineConfig) -> Result<Recording> {
    let filters = dsp::preprocessing_filters(&cfg.filter, rec.sample_rate_hz())?;
    let (rate, channels, events) = (rec.sample_rate_hz(), rec.channels().to_vec(), rec.events().to_vec());
    let mut data = rec.into_data();
    dsp::filter_rows(&filters, &mut data)?;
    Recording::new(rate, channels, data, events)
}

/// Full preprocessing of one continuous recording into z-scored epochs.
pub fn preprocess(
    rec: Recording,
    labels: &BTreeMap<TrialId, ConditionLabel>,
    cfg: &PipelineConfig,
) -> Result<(EpochSet, PrepReport)> {
    let mut warnings = Vec::new();
    if (rec.sample_rate_hz() - cfg.sample_rate_hz).abs() > 1e-9 {
        warnings.push(format!(
            "recording rate {} Hz differs from configured {} Hz; using the recording's rate",
            rec.sample_rate_hz(),
            cfg.sample_rate_hz
        ));
    }
    let rec = filter_recording(rec, cfg)?;
    let bad = detect_bad_channels(&rec, &cfg.bad_channels)?;
    let good = bad.good_channels();
    if good.len() < 3 {
        return Err(Error::invalid(format!("only {} good channels remain", good.len())));
    }
    let excluded = bad.excluded_channels();
    if !excluded.is_empty() {
        warnings.push(format!("excluded channels: {}", excluded.join(", ")));
    }
    let mut rec = if excluded.is_empty() { rec } else { rec.select_channels(&good)? };
    let ica_summary = if cfg.ica.enabled {
        let model = fit_ica(&rec, &cfg.ica, cfg.seed)?;
        if model.n_components() < cfg.ica.n_components {
            warnings.push(format!(
                "ICA reduced to {} components (data rank)",
                model.n_components()
            ));
        }
        let model = reject_components(
            &model,
            &rec,
            &cfg.ica.frontal_channels,
            cfg.ica.kurtosis_threshold,
            cfg.ica.frontal_corr_threshold,
        )?;
        rec = model.apply(&rec)?;
        Some(IcaSummary {
            n_components: model.n_components(),
            iterations: model.iterations(),
            components: model.components().to_vec(),
        })
    } else {
        None
    };
    let epochs = epoch(&rec, cfg.epoch_duration_s, labels)?;
    drop(rec);
    let epochs = zscore_channels(&epochs);
    Ok((
        epochs,
        PrepReport {
            bad_channels: bad,
            retained_channels: good,
            ica: ica_summary,
            warnings,
        },
    ))
}
