//! Filter design/application and spectral estimation.

mod fir;
mod spectrum;

pub use fir::{apply_filter, design_fir, filter_rows, gain_db, tap_count, FilterKind, FirFilter, MAX_TAPS};
pub use spectrum::{averaged_periodogram, band_power, welch_psd, PowerSpectrum, Window};

use crate::config::FilterConfig;
use crate::error::Result;

/// The notch, highpass and lowpass filters of the preprocessing chain, in
/// application order.
pub fn preprocessing_filters(cfg: &FilterConfig, sample_rate_hz: f64) -> Result<Vec<FirFilter>> {
    Ok(vec![
        design_fir(
            FilterKind::Bandstop,
            &[cfg.notch_hz - cfg.notch_half_width_hz, cfg.notch_hz + cfg.notch_half_width_hz],
            cfg.notch_transition_hz,
            sample_rate_hz,
        )?,
        design_fir(FilterKind::Highpass, &[cfg.highpass_hz], cfg.highpass_transition_hz, sample_rate_hz)?,
        design_fir(FilterKind::Lowpass, &[cfg.lowpass_hz], cfg.lowpass_transition_hz, sample_rate_hz)?,
    ])
}
