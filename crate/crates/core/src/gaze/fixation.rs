//! Dispersion-threshold (I-DT) fixation detection.

use serde::{Deserialize, Serialize};

use crate::model::GazeSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub onset_s: f64,
    pub duration_s: f64,
    pub x: f64,
    pub y: f64,
    /// Index of the first member sample.
    pub start: usize,
    pub n_samples: usize,
}

struct Extent {
    x: (f64, f64),
    y: (f64, f64),
}

impl Extent {
    fn of(samples: &[GazeSample]) -> Self {
        let mut e = Extent {
            x: (f64::INFINITY, f64::NEG_INFINITY),
            y: (f64::INFINITY, f64::NEG_INFINITY),
        };
        for s in samples {
            e.add(s);
        }
        e
    }

    fn add(&mut self, s: &GazeSample) {
        self.x = (self.x.0.min(s.x), self.x.1.max(s.x));
        self.y = (self.y.0.min(s.y), self.y.1.max(s.y));
    }

    fn dispersion(&self) -> f64 {
        (self.x.1 - self.x.0) + (self.y.1 - self.y.0)
    }
}

/// Fixations in time order. Dispersion is (max−min)x + (max−min)y; duration
/// is the span between the first and last member timestamps.
pub fn detect_fixations(samples: &[GazeSample], dispersion: f64, min_duration_s: f64) -> Vec<Fixation> {
    let n = samples.len();
    let mut out = Vec::new();
    let mut i = 0;
    // `j` is the first index whose time reaches t_i + min_duration; it only moves forward.
    let mut j = 0;
    while i < n {
        j = j.max(i);
        while j < n && samples[j].t - samples[i].t < min_duration_s {
            j += 1;
        }
        if j >= n {
            break;
        }
        let mut ext = Extent::of(&samples[i..=j]);
        if ext.dispersion() > dispersion {
            i += 1;
            continue;
        }
        while j + 1 < n {
            let mut grown = Extent { x: ext.x, y: ext.y };
            grown.add(&samples[j + 1]);
            if grown.dispersion() > dispersion {
                break;
            }
            ext = grown;
            j += 1;
        }
        let members = &samples[i..=j];
        let m = members.len() as f64;
        out.push(Fixation {
            onset_s: samples[i].t,
            duration_s: samples[j].t - samples[i].t,
            x: members.iter().map(|s| s.x).sum::<f64>() / m,
            y: members.iter().map(|s| s.y).sum::<f64>() / m,
            start: i,
            n_samples: members.len(),
        });
        i = j + 1;
    }
    out
}
