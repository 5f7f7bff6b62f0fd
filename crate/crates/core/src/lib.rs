//! Multimodal (EEG + eye tracking) reading-confusion detection.
//!
//! The crate is organised by pipeline stage: [`dsp`] and [`eeg_prep`] clean
//! the continuous EEG, [`eeg_features`] turns epochs into a feature table,
//! [`erp`] runs the N400 statistics, [`gaze`] handles eye tracking, [`learn`]
//! holds the classifiers and [`synth`] generates ground-truth datasets.
//! [`pipeline`] chains everything end to end.

pub mod config;
pub mod dsp;
pub mod eeg_features;
pub mod eeg_prep;
pub mod erp;
pub mod error;
pub mod gaze;
pub mod io;
pub mod learn;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, ErrorClass, Result};
pub use model::{
    ConditionLabel, EpochSet, Event, FeatureTable, GazeSample, GazeStream, Recording, RowKey, StimulusTrial, TrialId,
    Word, WordBox,
};
