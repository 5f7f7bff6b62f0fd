//! Synthetic paragraphs and reading gaze.
//!
//! Readers fixate words left to right, sweep back at line ends and start over
//! when the paragraph is finished. Confusion trials regress more often and
//! always dwell on a designated target word; some control trials dwell too,
//! which keeps the gaze modality imperfect.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream_rng, Stream, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{GazeSample, GazeStream, StimulusTrial, Word, WordBox};

const LEFT: f64 = 0.08;
const RIGHT: f64 = 0.92;
const TOP: f64 = 0.2;
const LINE_STEP: f64 = 0.055;
const LINE_HEIGHT: f64 = 0.035;
const WORD_GAP: f64 = 0.012;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ten", "ra", "su", "vel", "do", "pri", "an", "or", "ble", "stu", "ne", "gi", "mar",
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

fn paragraph(rng: &mut ChaCha8Rng) -> Vec<Word> {
    let lines = rng.random_range(4..=6);
    let mut words = Vec::new();
    for line in 0..lines {
        let y0 = TOP + line as f64 * LINE_STEP;
        let mut x = LEFT;
        loop {
            let text = pseudo_word(rng);
            let w = 0.01 + 0.009 * text.len() as f64;
            if x + w > RIGHT {
                break;
            }
            let bbox = WordBox::new(x, y0, x + w, y0 + LINE_HEIGHT).expect("positive extent");
            words.push(Word { text, bbox });
            x += w + WORD_GAP;
        }
    }
    words
}

/// One paragraph per trial, classes from [`SynthSpec::labels`].
pub fn synth_stimuli(spec: &SynthSpec) -> Vec<StimulusTrial> {
    spec.labels()
        .into_iter()
        .map(|(id, class)| StimulusTrial {
            id,
            class,
            words: paragraph(&mut stream_rng(spec.seed, Stream::Stimulus, id as u64)),
        })
        .collect()
}

/// Designated target word: any word on the second line except its first,
/// so an average reader reaches it well within the trial.
pub fn target_word(spec: &SynthSpec, stim: &StimulusTrial) -> usize {
    let second_y = stim.words[0].bbox.y_min + LINE_STEP;
    let candidates: Vec<usize> = (1..stim.words.len())
        .filter(|&i| {
            let (prev, cur) = (&stim.words[i - 1].bbox, &stim.words[i].bbox);
            (cur.y_min - second_y).abs() < 1e-9 && (prev.y_min - cur.y_min).abs() < 1e-9
        })
        .collect();
    let mut rng = stream_rng(spec.seed, Stream::Target, stim.id as u64);
    if candidates.is_empty() {
        return stim.words.len() / 2;
    }
    candidates[rng.random_range(0..candidates.len())]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeTruth {
    pub target_word: usize,
    /// Whether (and how long) the reader dwelt on a word.
    pub dwell_s: Option<f64>,
    /// The word that received the dwell. Always the target in confusion
    /// trials; a control reader who runs out of time dwells where they are.
    pub dwell_word: Option<usize>,
    pub regressions: usize,
    pub outliers: usize,
}

struct Fix {
    x: f64,
    y: f64,
    dur: f64,
}

fn reading_fixations(
    spec: &SynthSpec,
    stim: &StimulusTrial,
    target: usize,
    dwell: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> (Vec<Fix>, usize, Option<usize>) {
    let g = &spec.gaze;
    let regress_p = if stim.class.is_confusion() {
        g.regression_prob_confusion
    } else {
        g.regression_prob_control
    };
    let dur = Normal::new(g.fixation_s, g.fixation_sd_s).expect("finite sd");
    let mut fixes = Vec::new();
    let (mut t, mut w, mut regressions) = (0.0, 0usize, 0usize);
    let mut dwell_left = dwell;
    let mut dwell_at = target;
    let mut dwell_word = None;
    while t < spec.trial_s {
        // A pending dwell always happens. Confused readers jump to the
        // target when time runs short; others dwell on the current word.
        if let Some(d) = dwell_left {
            if spec.trial_s - t < d + 0.5 {
                if stim.class.is_confusion() {
                    w = target;
                } else {
                    dwell_at = w;
                }
            }
        }
        let b = stim.words[w].bbox;
        let (cx, cy) = b.center();
        let (width, height) = (b.x_max - b.x_min, b.y_max - b.y_min);
        if w == dwell_at && dwell_left.is_some() {
            dwell_word = Some(w);
            // A dense run of refixations inside the word box.
            let total = dwell_left.take().expect("checked");
            let mut spent = 0.0;
            while spent < total {
                let d = rng.random_range(0.2..0.4f64).min(total - spent).max(0.1);
                fixes.push(Fix {
                    x: cx + rng.random_range(-0.35..0.35) * width,
                    y: cy + rng.random_range(-0.2..0.2) * height,
                    dur: d,
                });
                spent += d + g.saccade_s;
            }
            t += spent;
        } else {
            let d = dur.sample(rng).clamp(0.1, 0.6);
            fixes.push(Fix {
                x: cx + rng.random_range(-0.25..0.25) * width,
                y: cy + rng.random_range(-0.1..0.1) * height,
                dur: d,
            });
            t += d + g.saccade_s;
        }
        if w > 0 && rng.random::<f64>() < regress_p {
            w -= rng.random_range(1..=w.min(3));
            regressions += 1;
        } else {
            w = (w + 1) % stim.words.len();
        }
    }
    (fixes, regressions, dwell_word)
}

fn gaze_trial(spec: &SynthSpec, stim: &StimulusTrial) -> Result<(GazeStream, GazeTruth)> {
    let g = &spec.gaze;
    if stim.words.is_empty() {
        return Err(Error::invalid(format!("trial {}: stimulus has no words", stim.id)));
    }
    let mut rng = stream_rng(spec.seed, Stream::Gaze, stim.id as u64);
    let target = target_word(spec, stim);
    let dwell = if stim.class.is_confusion() {
        Some(rng.random_range(g.dwell_s[0]..=g.dwell_s[1]))
    } else if rng.random::<f64>() < g.control_dwell_prob {
        Some(rng.random_range(g.control_dwell_s[0]..=g.control_dwell_s[1]))
    } else {
        None
    };
    let (fixes, regressions, dwell_word) = reading_fixations(spec, stim, target, dwell, &mut rng);

    // Segments: a linear saccade into each fixation (none before the first).
    let mut segments = Vec::with_capacity(2 * fixes.len());
    let mut t = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for f in &fixes {
        if let Some(p) = prev {
            segments.push((t, t + g.saccade_s, p, (f.x, f.y)));
            t += g.saccade_s;
        }
        segments.push((t, t + f.dur, (f.x, f.y), (f.x, f.y)));
        t += f.dur;
        prev = Some((f.x, f.y));
    }

    let n = (spec.trial_s * g.rate_hz).round() as usize;
    let jitter = Normal::new(0.0, g.jitter).expect("finite jitter");
    let mut seg = 0;
    let mut outliers = 0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / g.rate_hz;
            while seg + 1 < segments.len() && segments[seg].1 <= t {
                seg += 1;
            }
            let (t0, t1, a, b) = segments[seg];
            let u = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
            let mut x = a.0 + u * (b.0 - a.0) + jitter.sample(&mut rng);
            let mut y = a.1 + u * (b.1 - a.1) + jitter.sample(&mut rng);
            let mut c = rng.random_range(0.85..=1.0);
            if rng.random::<f64>() < g.outlier_rate {
                x = rng.random();
                y = rng.random();
                c = rng.random_range(0.0..0.4);
                outliers += 1;
            }
            GazeSample {
                t,
                x: x.clamp(0.0, 1.0),
                y: y.clamp(0.0, 1.0),
                c,
            }
        })
        .collect();
    Ok((
        GazeStream::new(stim.id, samples)?,
        GazeTruth {
            target_word: target,
            dwell_s: dwell,
            dwell_word,
            regressions,
            outliers,
        },
    ))
}

/// Gaze for every stimulus trial, in stimulus order.
pub fn synth_gaze(spec: &SynthSpec, stimuli: &[StimulusTrial]) -> Result<(Vec<GazeStream>, Vec<GazeTruth>)> {
    let out: Vec<(GazeStream, GazeTruth)> = stimuli
        .par_iter()
        .map(|s| gaze_trial(spec, s))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}
