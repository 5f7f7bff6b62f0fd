//! Windowed-sinc (Hamming) linear-phase FIR filters and zero-phase application.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_TAPS: usize = 8193;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
    Bandstop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    kind: FilterKind,
    cutoffs_hz: Vec<f64>,
    transition_hz: f64,
    sample_rate_hz: f64,
}

/// Tap count for a Hamming design: next odd integer ≥ 3.3 / (transition / rate), capped.
pub fn tap_count(transition_hz: f64, sample_rate_hz: f64) -> usize {
    let n = (3.3 * sample_rate_hz / transition_hz).ceil() as usize;
    let n = if n % 2 == 0 { n + 1 } else { n };
    n.clamp(3, MAX_TAPS)
}

fn hamming(n: usize) -> Vec<f64> {
    let m = (n - 1) as f64;
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / m).cos()).collect()
}

/// Windowed ideal lowpass with cutoff `fc` (cycles/sample), normalised to unit DC gain.
fn lowpass_kernel(n: usize, fc: f64, win: &[f64]) -> Vec<f64> {
    let mid = (n / 2) as f64;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - mid;
            let s = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            s * win[i]
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Design a filter. Cutoffs are the −6 dB points; the passband and stopband
/// edges sit half a transition width either side of each cutoff.
pub fn design_fir(kind: FilterKind, cutoffs_hz: &[f64], transition_hz: f64, sample_rate_hz: f64) -> Result<FirFilter> {
    let nyquist = sample_rate_hz / 2.0;
    let expected = match kind {
        FilterKind::Lowpass | FilterKind::Highpass => 1,
        FilterKind::Bandpass | FilterKind::Bandstop => 2,
    };
    if cutoffs_hz.len() != expected {
        return Err(Error::invalid(format!("{kind:?} needs {expected} cutoff(s), got {}", cutoffs_hz.len())));
    }
    if !(transition_hz > 0.0) {
        return Err(Error::invalid("transition width must be positive"));
    }
    for &c in cutoffs_hz {
        if !(c > 0.0 && c < nyquist) {
            return Err(Error::invalid(format!("cutoff {c} Hz outside (0, {nyquist}) Hz")));
        }
    }
    if expected == 2 && cutoffs_hz[0] >= cutoffs_hz[1] {
        return Err(Error::invalid("band edges must be increasing"));
    }
    let n = tap_count(transition_hz, sample_rate_hz);
    let win = hamming(n);
    let f = |hz: f64| hz / sample_rate_hz;
    let mut taps = match kind {
        FilterKind::Lowpass => lowpass_kernel(n, f(cutoffs_hz[0]), &win),
        FilterKind::Highpass => lowpass_kernel(n, f(cutoffs_hz[0]), &win).iter().map(|v| -v).collect(),
        FilterKind::Bandpass | FilterKind::Bandstop => {
            let lo = lowpass_kernel(n, f(cutoffs_hz[0]), &win);
            let hi = lowpass_kernel(n, f(cutoffs_hz[1]), &win);
            let sign = if kind == FilterKind::Bandpass { 1.0 } else { -1.0 };
            hi.iter().zip(&lo).map(|(h, l)| sign * (h - l)).collect::<Vec<_>>()
        }
    };
    // Spectral inversion puts the unit impulse back at the centre tap.
    if matches!(kind, FilterKind::Highpass | FilterKind::Bandstop) {
        taps[n / 2] += 1.0;
    }
    Ok(FirFilter {
        taps,
        kind,
        cutoffs_hz: cutoffs_hz.to_vec(),
        transition_hz,
        sample_rate_hz,
    })
}

impl FirFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn cutoffs_hz(&self) -> &[f64] {
        &self.cutoffs_hz
    }

    pub fn transition_hz(&self) -> f64 {
        self.transition_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Group delay in samples.
    pub fn delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// |H(f)| evaluated directly from the taps.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, h) in self.taps.iter().enumerate() {
            re += h * (w * n as f64).cos();
            im -= h * (w * n as f64).sin();
        }
        re.hypot(im)
    }

    /// Magnitude response on `n_points` evenly spaced frequencies from 0 to Nyquist.
    pub fn magnitude_grid(&self, n_points: usize) -> Vec<(f64, f64)> {
        let nyq = self.sample_rate_hz / 2.0;
        (0..n_points)
            .map(|i| {
                let f = nyq * i as f64 / (n_points - 1) as f64;
                (f, self.magnitude_at(f))
            })
            .collect()
    }
}

pub fn gain_db(magnitude: f64) -> f64 {
    20.0 * magnitude.max(1e-300).log10()
}

/// Mirror-reflect `x` by `pad` samples on both sides (edge sample not repeated).
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|k| x[k]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|k| x[n - 1 - k]));
    out
}

const DIRECT_LIMIT: usize = 64;

/// Reusable FFT overlap-add engine for one filter.
struct Ola {
    taps: Vec<f64>,
    block: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    kernel: Vec<Complex<f64>>,
}

impl Ola {
    fn new(taps: &[f64]) -> Self {
        let m = taps.len();
        let nfft = (4 * m).next_power_of_two().max(1024);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let ifft = planner.plan_fft_inverse(nfft);
        let mut kernel: Vec<Complex<f64>> = taps.iter().map(|&t| Complex::new(t, 0.0)).collect();
        kernel.resize(nfft, Complex::new(0.0, 0.0));
        fft.process(&mut kernel);
        Self {
            taps: taps.to_vec(),
            block: nfft - m + 1,
            fft,
            ifft,
            kernel,
        }
    }

    /// "Valid" correlation of the padded signal with the (symmetric) taps:
    /// out[i] = Σ_k taps[k]·padded[i+k], for i in 0..padded.len()-m+1.
    fn valid(&self, padded: &[f64], out: &mut [f64]) {
        let m = self.taps.len();
        if m <= DIRECT_LIMIT {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.taps.iter().zip(&padded[i..i + m]).map(|(a, b)| a * b).sum();
            }
            return;
        }
        let nfft = self.kernel.len();
        let scale = 1.0 / nfft as f64;
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        let n_out = out.len();
        let mut start = 0;
        // Each block reads padded[start .. start+block+m-1] and yields `block` outputs.
        while start < n_out {
            let take = (self.block + m - 1).min(padded.len() - start);
            for (b, v) in buf.iter_mut().zip(padded[start..start + take].iter()) {
                *b = Complex::new(*v, 0.0);
            }
            buf[take..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
            self.fft.process(&mut buf);
            for (b, k) in buf.iter_mut().zip(&self.kernel) {
                *b *= k;
            }
            self.ifft.process(&mut buf);
            // Full convolution index j = i + m - 1 corresponds to correlation output i
            // (taps are symmetric, so convolution and correlation coincide).
            let count = self.block.min(n_out - start);
            for i in 0..count {
                out[start + i] = buf[i + m - 1].re * scale;
            }
            start += count;
        }
    }

    fn apply(&self, signal: &mut [f64]) {
        let pad = (self.taps.len() - 1) / 2;
        let padded = reflect_pad(signal, pad);
        self.valid(&padded, signal);
    }
}

fn check_len(filter: &FirFilter, n: usize) -> Result<()> {
    if n <= filter.len() {
        return Err(Error::invalid(format!(
            "signal of {n} samples is too short for a {}-tap filter",
            filter.len()
        )));
    }
    Ok(())
}

/// Zero-phase filtering: reflect-pad by the group delay, convolve, keep the
/// centred part. Output length equals input length.
pub fn apply_filter(filter: &FirFilter, signal: &[f64]) -> Result<Vec<f64>> {
    check_len(filter, signal.len())?;
    let mut out = signal.to_vec();
    Ola::new(&filter.taps).apply(&mut out);
    Ok(out)
}

/// Apply a cascade of filters to every row of a channels × samples matrix, in place.
pub fn filter_rows(filters: &[FirFilter], data: &mut Array2<f64>) -> Result<()> {
    for f in filters {
        check_len(f, data.ncols())?;
    }
    let engines: Vec<Ola> = filters.iter().map(|f| Ola::new(&f.taps)).collect();
    let rows: Vec<_> = data.outer_iter_mut().collect();
    rows.into_par_iter().for_each(|mut row| {
        let mut buf = row.to_vec();
        for e in &engines {
            e.apply(&mut buf);
        }
        row.iter_mut().zip(buf).for_each(|(r, v)| *r = v);
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_reference(taps: &[f64], x: &[f64]) -> Vec<f64> {
        let pad = (taps.len() - 1) / 2;
        let p = reflect_pad(x, pad);
        (0..x.len())
            .map(|i| taps.iter().enumerate().map(|(k, t)| t * p[i + k]).sum())
            .collect()
    }

    #[test]
    fn tap_count_rule() {
        assert_eq!(tap_count(1.0, 512.0), 1691);
        assert_eq!(tap_count(25.0, 512.0), 69);
        assert_eq!(tap_count(0.01, 512.0), MAX_TAPS);
    }

    #[test]
    fn taps_are_symmetric_and_odd() {
        for (kind, cut) in [
            (FilterKind::Lowpass, vec![100.0]),
            (FilterKind::Highpass, vec![1.0]),
            (FilterKind::Bandpass, vec![8.0, 13.0]),
            (FilterKind::Bandstop, vec![59.0, 61.0]),
        ] {
            let f = design_fir(kind, &cut, 2.0, 512.0).unwrap();
            assert_eq!(f.len() % 2, 1);
            let t = f.taps();
            for i in 0..t.len() {
                assert!((t[i] - t[t.len() - 1 - i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cutoff_at_or_above_nyquist_is_an_error() {
        assert!(design_fir(FilterKind::Lowpass, &[256.0], 1.0, 512.0).is_err());
        assert!(design_fir(FilterKind::Lowpass, &[300.0], 1.0, 512.0).is_err());
        assert!(design_fir(FilterKind::Bandstop, &[61.0, 59.0], 1.0, 512.0).is_err());
    }

    #[test]
    fn fft_path_matches_direct_convolution() {
        let f = design_fir(FilterKind::Bandstop, &[59.0, 61.0], 4.0, 512.0).unwrap();
        assert!(f.len() > DIRECT_LIMIT);
        let x: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let fast = apply_filter(&f, &x).unwrap();
        let slow = direct_reference(f.taps(), &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let f = design_fir(FilterKind::Highpass, &[1.0], 1.0, 512.0).unwrap();
        assert!(apply_filter(&f, &vec![0.0; 1000]).is_err());
    }

    #[test]
    fn rows_match_single_channel_path() {
        let hp = design_fir(FilterKind::Highpass, &[1.0], 1.0, 512.0).unwrap();
        let lp = design_fir(FilterKind::Lowpass, &[100.0], 25.0, 512.0).unwrap();
        let mut data = Array2::from_shape_fn((3, 4000), |(c, i)| ((i * (c + 3)) as f64 * 0.01).sin() + c as f64);
        let expect: Vec<Vec<f64>> = data
            .outer_iter()
            .map(|r| apply_filter(&lp, &apply_filter(&hp, &r.to_vec()).unwrap()).unwrap())
            .collect();
        filter_rows(&[hp, lp], &mut data).unwrap();
        for (row, e) in data.outer_iter().zip(expect) {
            assert_eq!(row.to_vec(), e);
        }
    }
}
