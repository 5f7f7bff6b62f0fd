//! Power spectral density estimates and band integration.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n` (the DFT-even form used for spectral analysis).
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// One-sided PSD (power per Hz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub freqs_hz: Vec<f64>,
    pub psd: Vec<f64>,
    pub segment_len: usize,
    pub nfft: usize,
    pub overlap: f64,
    pub window: Window,
}

impl PowerSpectrum {
    pub fn nyquist(&self) -> f64 {
        *self.freqs_hz.last().unwrap_or(&0.0)
    }

    /// Trapezoid integral over the full grid.
    pub fn total_power(&self) -> f64 {
        self.freqs_hz
            .windows(2)
            .zip(self.psd.windows(2))
            .map(|(f, p)| 0.5 * (p[0] + p[1]) * (f[1] - f[0]))
            .sum()
    }

    /// PSD-weighted centroid frequency (0 for an all-zero spectrum).
    pub fn mean_frequency(&self) -> f64 {
        let total: f64 = self.psd.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.freqs_hz.iter().zip(&self.psd).map(|(f, p)| f * p).sum::<f64>() / total
    }

    /// Frequency of the largest PSD value (first on ties; 0 for an all-zero spectrum).
    pub fn peak_frequency(&self) -> f64 {
        let mut best = 0;
        for (i, p) in self.psd.iter().enumerate() {
            if *p > self.psd[best] {
                best = i;
            }
        }
        if self.psd[best] > 0.0 {
            self.freqs_hz[best]
        } else {
            0.0
        }
    }
}

/// Windowed periodograms of `segment_len` samples, zero-padded to `nfft`,
/// averaged over segments advancing by `segment_len·(1 − overlap)`.
/// Density scaling: Σ psd·Δf equals the mean square of the windowed segment
/// divided by the window's mean square.
pub fn averaged_periodogram(
    signal: &[f64],
    sample_rate_hz: f64,
    segment_len: usize,
    nfft: usize,
    overlap: f64,
    window: Window,
) -> Result<PowerSpectrum> {
    if segment_len < 2 || segment_len > signal.len() {
        return Err(Error::invalid(format!(
            "segment length {segment_len} must lie in [2, {}]",
            signal.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} outside [0, 1)")));
    }
    if nfft < segment_len {
        return Err(Error::invalid("nfft shorter than the segment"));
    }
    let step = (segment_len - (overlap * segment_len as f64).round() as usize).max(1);
    let n_seg = 1 + (signal.len() - segment_len) / step;
    let win = window.coefficients(segment_len);
    let win_energy: f64 = win.iter().map(|w| w * w).sum();
    let scale = 1.0 / (sample_rate_hz * win_energy * n_seg as f64);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let n_bins = nfft / 2 + 1;
    let mut psd = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for s in 0..n_seg {
        let seg = &signal[s * step..s * step + segment_len];
        for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&win)) {
            *b = Complex::new(x * w, 0.0);
        }
        buf[segment_len..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
    }
    for (k, p) in psd.iter_mut().enumerate() {
        // One-sided: double everything except DC and (for even nfft) Nyquist.
        let one_sided = if k == 0 || (nfft % 2 == 0 && k == n_bins - 1) { 1.0 } else { 2.0 };
        *p *= scale * one_sided;
    }
    let freqs_hz = (0..n_bins).map(|k| k as f64 * sample_rate_hz / nfft as f64).collect();
    Ok(PowerSpectrum {
        freqs_hz,
        psd,
        segment_len,
        nfft,
        overlap,
        window,
    })
}

/// Welch estimate: Hann window, no zero padding.
pub fn welch_psd(signal: &[f64], sample_rate_hz: f64, segment_len: usize, overlap: f64) -> Result<PowerSpectrum> {
    averaged_periodogram(signal, sample_rate_hz, segment_len, segment_len, overlap, Window::Hann)
}

/// Exact integral over [lo, hi] of the piecewise-linear interpolant of the PSD.
pub fn band_power(spectrum: &PowerSpectrum, lo_hz: f64, hi_hz: f64) -> Result<f64> {
    let nyq = spectrum.nyquist();
    if !(lo_hz >= 0.0 && lo_hz < hi_hz && hi_hz <= nyq * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("band [{lo_hz}, {hi_hz}] Hz invalid for Nyquist {nyq} Hz")));
    }
    let f = &spectrum.freqs_hz;
    let p = &spectrum.psd;
    let mut total = 0.0;
    for i in 0..f.len() - 1 {
        let (a, b) = (f[i].max(lo_hz), f[i + 1].min(hi_hz));
        if b <= a {
            continue;
        }
        let slope = (p[i + 1] - p[i]) / (f[i + 1] - f[i]);
        let pa = p[i] + slope * (a - f[i]);
        let pb = p[i] + slope * (b - f[i]);
        total += 0.5 * (pa + pb) * (b - a);
    }
    Ok(total.max(0.0))
}
