//! Readers and writers for every on-disk format.

mod eeg;
mod features;
mod gaze;
mod stimuli;
pub(crate) mod tensor;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use eeg::{read_eeg_csv, read_events, write_eeg_csv, write_events};
pub use features::{read_features_csv, write_features_csv};
pub use gaze::{read_gaze_csv, write_gaze_csv, GazeData, GAZE_HEADER};
pub use stimuli::{parse_stimuli, read_stimuli, write_stimuli};
pub use tensor::{
    quantize_f32, read_epochs, read_traces, write_epochs, write_traces, TraceSet, EPOCH_MAGIC, TRACE_MAGIC,
};

/// Write any serializable report as pretty-printed JSON.
pub fn write_report<T: Serialize + ?Sized>(path: &Path, report: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
