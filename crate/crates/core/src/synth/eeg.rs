//! Continuous synthetic EEG.
//!
//! The recording is a chain of overlapping blocks, one per trial plus a lead
//! and a tail block. Each block holds independently drawn noise and is
//! crossfaded into its neighbours with sin/cos ramps, so the background stays
//! continuous and stationary while every block can be drawn from its own
//! random stream. Trials sit in the flat middle of their block.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{position, stream_rng, Stream, SynthSpec};
use crate::error::Result;
use crate::model::{ConditionLabel, Event, Recording, TrialId};

pub struct SynthEeg {
    pub recording: Recording,
    pub labels: BTreeMap<TrialId, ConditionLabel>,
}

struct Layout {
    fade: usize,
    period: usize,
    block_len: usize,
    n_blocks: usize,
    total: usize,
}

impl Layout {
    fn new(spec: &SynthSpec) -> Self {
        let core = (spec.trial_s * spec.sample_rate_hz).round() as usize;
        let fade = ((spec.gap_s * spec.sample_rate_hz).round() as usize).max(1);
        let period = core + fade;
        let n_blocks = spec.n_trials + 2;
        Self {
            fade,
            period,
            block_len: period + fade,
            n_blocks,
            total: n_blocks * period + fade,
        }
    }

    /// Trial k lives in block k + 1, right after its leading ramp.
    fn onset(&self, trial: usize) -> usize {
        (trial + 1) * self.period + self.fade
    }

    fn ramp(&self, i: usize) -> f64 {
        let f = self.fade as f64;
        if i < self.fade {
            (0.5 * PI * (i as f64 + 0.5) / f).sin()
        } else if i >= self.period {
            (0.5 * PI * ((i - self.period) as f64 + 0.5) / f).cos()
        } else {
            1.0
        }
    }
}

/// Amplitude spectra over the bins 0..=N/2, each scaled so the synthesized
/// series has unit variance.
struct Shapes {
    pink: Vec<f64>,
    theta: Vec<f64>,
    alpha: Vec<f64>,
}

fn normalized(n: usize, amp: impl Fn(f64) -> f64, df: f64) -> Vec<f64> {
    let half: Vec<f64> = (0..=n / 2).map(|k| if k == 0 { 0.0 } else { amp(k as f64 * df) }).collect();
    // Bins other than DC and Nyquist appear twice in the full spectrum.
    let power: f64 = half
        .iter()
        .enumerate()
        .map(|(k, a)| if k == 0 || 2 * k == n { a * a } else { 2.0 * a * a })
        .sum();
    let scale = if power > 0.0 { 1.0 / power.sqrt() } else { 0.0 };
    half.into_iter().map(|a| a * scale).collect()
}

impl Shapes {
    fn new(n: usize, fs: f64) -> Self {
        let df = fs / n as f64;
        Self {
            pink: normalized(n, |f| 1.0 / f.max(0.5).sqrt(), df),
            theta: normalized(n, |f| if (4.0..=8.0).contains(&f) { 1.0 } else { 0.0 }, df),
            alpha: normalized(n, |f| (-(f - 10.0).powi(2) / 2.0).exp(), df),
        }
    }
}

/// Gaussian noise with amplitude spectrum `shape` (see [`Shapes`]).
fn colored(rng: &mut ChaCha8Rng, shape: &[f64], fft: &Arc<dyn Fft<f64>>, buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
    let n = fft.len();
    buf.clear();
    buf.resize(n, Complex::new(0.0, 0.0));
    for k in 1..=n / 2 {
        let a = shape[k];
        if 2 * k == n {
            let z: f64 = rng.sample(StandardNormal);
            buf[k] = Complex::new(a * z, 0.0);
        } else {
            let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let c = Complex::new(re, im) * (a / 2f64.sqrt());
            buf[k] = c;
            buf[n - k] = c.conj();
        }
    }
    fft.process(buf);
    buf.iter().map(|c| c.re).collect()
}

/// Depth of the slow amplitude modulation; it makes each source super-Gaussian
/// enough for ICA to isolate.
const AM_DEPTH: f64 = 0.9;

struct Model {
    channels: usize,
    /// channels × latent sources.
    mixing: Array2<f64>,
    am_hz: Vec<f64>,
    am_phase: Vec<f64>,
    blink_topo: Vec<f64>,
    affected: Vec<bool>,
    line_gain: Vec<f64>,
    line_phase: Vec<f64>,
    shapes: Shapes,
    /// Sensor + theta spectra for ordinary and theta-boosted channels.
    sensor: Vec<f64>,
    sensor_boosted: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

fn gaussian_topo(pos: &[(f64, f64)], centre: (f64, f64), spread: f64) -> Vec<f64> {
    pos.iter()
        .map(|&(x, y)| (-((x - centre.0).powi(2) + (y - centre.1).powi(2)) / (2.0 * spread * spread)).exp())
        .collect()
}

/// `n` electrode positions, visited in random order and kept only when far
/// from every position already kept; the spacing relaxes until `n` are found.
/// Well separated centres keep the local topographies linearly independent.
fn spread_centres(pos: &[(f64, f64)], n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..pos.len()).collect();
    order.shuffle(rng);
    let mut min_dist = 2.5;
    loop {
        let mut kept: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &i in &order {
            let p = pos[i];
            if kept.len() < n && kept.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= min_dist) {
                kept.push(p);
            }
        }
        if kept.len() == n || min_dist < 1e-9 {
            // Beyond one source per electrode, reuse positions cyclically.
            let base = kept.clone();
            while !base.is_empty() && kept.len() < n {
                kept.push(base[kept.len() % base.len()]);
            }
            return kept;
        }
        min_dist *= 0.9;
    }
}

impl Model {
    fn new(spec: &SynthSpec, layout: &Layout) -> Self {
        let noise = &spec.eeg_noise;
        let pos: Vec<(f64, f64)> = spec.channels.iter().map(|c| position(c)).collect();
        let c = pos.len();
        let k = noise.n_latent;
        let mut rng = stream_rng(spec.seed, Stream::Topography, 0);
        let mut mixing = Array2::zeros((c, k));
        let (mut am_hz, mut am_phase) = (Vec::new(), Vec::new());
        let centres = spread_centres(&pos, k.saturating_sub(2), &mut rng);
        for j in 0..k {
            // Source 0 is the posterior alpha rhythm and source 1 the common
            // reference signal; the rest are broadband and local.
            let (centre, spread, amp) = if j == 0 {
                ((0.0, -3.5), 3.0, noise.alpha_uv)
            } else if j == 1 {
                ((0.0, 0.0), 1e6, noise.common_uv)
            } else {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (centres[j - 2], rng.random_range(0.9..1.4), sign * noise.latent_uv * rng.random_range(0.8..1.25))
            };
            for (i, w) in gaussian_topo(&pos, centre, spread).into_iter().enumerate() {
                mixing[[i, j]] = amp * w;
            }
            am_hz.push(rng.random_range(0.1..0.5));
            am_phase.push(rng.random_range(0.0..TAU));
        }
        // The N400 generator: a bilateral temporal source that is active all the
        // time and shares its topography with the injected deflection, so ICA
        // sees one ongoing component rather than a sparse, kurtotic one.
        let affected: Vec<bool> = spec.channels.iter().map(|ch| spec.affected_channels.contains(ch)).collect();
        if affected.iter().any(|&a| a) {
            let col: Vec<f64> = affected.iter().map(|&a| if a { noise.latent_uv } else { 0.0 }).collect();
            mixing.push_column(ndarray::ArrayView1::from(&col)).expect("one entry per channel");
            am_hz.push(rng.random_range(0.1..0.5));
            am_phase.push(rng.random_range(0.0..TAU));
        }
        let line_gain = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let line_phase = (0..c).map(|_| rng.random_range(-0.3..0.3)).collect();
        let n = layout.block_len;
        let shapes = Shapes::new(n, spec.sample_rate_hz);
        let mix = |theta_uv: f64| -> Vec<f64> {
            shapes
                .pink
                .iter()
                .zip(&shapes.theta)
                .map(|(p, t)| ((noise.sensor_uv * p).powi(2) + (theta_uv * t).powi(2)).sqrt())
                .collect()
        };
        let sensor = mix(spec.theta_uv);
        let sensor_boosted = mix(spec.theta_uv * spec.theta_gain.sqrt());
        Self {
            channels: c,
            mixing,
            am_hz,
            am_phase,
            blink_topo: gaussian_topo(&pos, (0.0, 4.2), 1.5),
            affected,
            line_gain,
            line_phase,
            shapes,
            sensor,
            sensor_boosted,
            fft: FftPlanner::new().plan_fft_inverse(n),
        }
    }

    /// One windowed block; `class` is `None` for the lead and tail blocks.
    fn block(&self, spec: &SynthSpec, layout: &Layout, b: usize, class: Option<ConditionLabel>) -> Array2<f64> {
        let n = layout.block_len;
        let fs = spec.sample_rate_hz;
        let mut rng = stream_rng(spec.seed, Stream::Block, b as u64);
        let mut buf = Vec::with_capacity(n);
        let start = b * layout.period;

        let k = self.mixing.ncols();
        let mut sources = Array2::zeros((k, n));
        for j in 0..k {
            let shape = if j == 0 { &self.shapes.alpha } else { &self.shapes.pink };
            let s = colored(&mut rng, shape, &self.fft, &mut buf);
            let (f, ph) = (self.am_hz[j], self.am_phase[j]);
            for (i, v) in s.into_iter().enumerate() {
                let t = (start + i) as f64 / fs;
                sources[[j, i]] = v * (1.0 + AM_DEPTH * (TAU * f * t + ph).sin());
            }
        }
        let mut out = self.mixing.dot(&sources);
        drop(sources);

        let noise = &spec.eeg_noise;
        if noise.blink_uv > 0.0 && noise.blink_rate_hz > 0.0 {
            let count: f64 = Poisson::new(noise.blink_rate_hz * layout.period as f64 / fs)
                .expect("positive rate")
                .sample(&mut rng);
            let width = 0.05 * fs;
            for _ in 0..count as usize {
                let centre = rng.random_range(0.0..n as f64);
                let amp = noise.blink_uv * rng.random_range(0.7..1.3);
                let lo = (centre - 4.0 * width).max(0.0) as usize;
                let hi = ((centre + 4.0 * width) as usize).min(n);
                for i in lo..hi {
                    let w = amp * (-((i as f64 - centre) / width).powi(2) / 2.0).exp();
                    for (ch, topo) in self.blink_topo.iter().enumerate() {
                        out[[ch, i]] += topo * w;
                    }
                }
            }
        }

        let confused = class.is_some_and(|c| c.is_confusion());
        for ch in 0..self.channels {
            let boosted = confused && self.affected[ch];
            let shape = if boosted { &self.sensor_boosted } else { &self.sensor };
            let s = colored(&mut rng, shape, &self.fft, &mut buf);
            out.row_mut(ch).iter_mut().zip(s).for_each(|(o, v)| *o += v);
        }

        if confused && spec.n400_amplitude_uv > 0.0 {
            let sd = spec.n400_width_s / (2.0 * (2.0 * 2f64.ln()).sqrt());
            let centre = layout.fade as f64 + spec.n400_latency_s * fs;
            let reach = (5.0 * sd * fs).ceil();
            let lo = (centre - reach).max(0.0) as usize;
            let hi = ((centre + reach) as usize).min(n);
            for ch in (0..self.channels).filter(|&c| self.affected[c]) {
                for i in lo..hi {
                    let t = (i as f64 - centre) / fs;
                    out[[ch, i]] -= spec.n400_amplitude_uv * (-(t / sd).powi(2) / 2.0).exp();
                }
            }
        }

        for mut row in out.rows_mut() {
            row.iter_mut().enumerate().for_each(|(i, v)| *v *= layout.ramp(i));
        }
        out
    }
}

/// Values are rounded to 1e-3 µV so the CSV text round-trips exactly.
fn quantize(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Blocks generated per parallel batch (bounds peak memory).
const BATCH: usize = 32;

pub fn synth_eeg(spec: &SynthSpec) -> Result<SynthEeg> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let model = Model::new(spec, &layout);
    let labels = spec.labels();
    let class_of = |b: usize| (b >= 1 && b <= spec.n_trials).then(|| labels[&((b - 1) as TrialId)]);

    let mut data = Array2::<f64>::zeros((model.channels, layout.total));
    let mut b0 = 0;
    while b0 < layout.n_blocks {
        let b1 = (b0 + BATCH).min(layout.n_blocks);
        let blocks: Vec<Array2<f64>> = (b0..b1)
            .into_par_iter()
            .map(|b| model.block(spec, &layout, b, class_of(b)))
            .collect();
        for (b, block) in (b0..b1).zip(blocks) {
            let start = b * layout.period;
            let mut dst = data.slice_mut(s![.., start..start + layout.block_len]);
            dst += &block;
        }
        b0 = b1;
    }

    let fs = spec.sample_rate_hz;
    let noise = &spec.eeg_noise;
    let rows: Vec<_> = data.outer_iter_mut().enumerate().collect();
    rows.into_par_iter().for_each(|(ch, mut row)| {
        let (g, ph) = (model.line_gain[ch], model.line_phase[ch]);
        for (i, v) in row.iter_mut().enumerate() {
            let line = noise.line_uv * g * (TAU * noise.line_hz * i as f64 / fs + ph).sin();
            *v = quantize(*v + line);
        }
    });

    let events = (0..spec.n_trials)
        .map(|k| Event {
            sample: layout.onset(k),
            trial: k as TrialId,
        })
        .collect();
    let recording = Recording::new(fs, spec.channels.clone(), data, events)?;
    Ok(SynthEeg { recording, labels })
}
