//! Gaze CSV with header `t,x,y,c,trial_id`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GazeSample, GazeStream, TrialId};

pub const GAZE_HEADER: &str = "t,x,y,c,trial_id";

/// Parsed gaze file: one stream per trial plus the count of coordinates that
/// were clamped into the unit square.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeData {
    pub streams: Vec<GazeStream>,
    pub clamped: usize,
}

pub fn read_gaze_csv(path: &Path) -> Result<GazeData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gaze(&text, &path.display().to_string())
}

pub(crate) fn parse_gaze(text: &str, name: &str) -> Result<GazeData> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == GAZE_HEADER => {}
        _ => return Err(Error::parse(name, 1, format!("expected header `{GAZE_HEADER}`"))),
    }
    let mut by_trial: BTreeMap<TrialId, Vec<GazeSample>> = BTreeMap::new();
    let mut clamped = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(name, line_no, format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = fields[k]
                .trim()
                .parse()
                .map_err(|_| Error::parse(name, line_no, format!("bad number `{}`", fields[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(name, line_no, "non-finite value"))
            }
        };
        let (t, mut x, mut y, c) = (num(0)?, num(1)?, num(2)?, num(3)?);
        let trial: TrialId = fields[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(name, line_no, format!("bad trial id `{}`", fields[4])))?;
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::parse(name, line_no, format!("confidence {c} outside [0,1]")));
        }
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            clamped += 1;
            x = x.clamp(0.0, 1.0);
            y = y.clamp(0.0, 1.0);
        }
        by_trial.entry(trial).or_default().push(GazeSample { t, x, y, c });
    }
    if clamped > 0 {
        log::warn!("{name}: clamped {clamped} gaze samples into the unit square");
    }
    let streams = by_trial
        .into_iter()
        .map(|(trial, mut samples)| {
            samples.sort_by(|a, b| a.t.total_cmp(&b.t));
            GazeStream::new(trial, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GazeData { streams, clamped })
}

pub fn write_gaze_csv(streams: &[GazeStream], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * streams.iter().map(|s| s.len()).sum::<usize>() + 32);
    out.push_str(GAZE_HEADER);
    out.push('\n');
    for s in streams {
        for g in s.samples() {
            writeln!(out, "{},{},{},{},{}", g.t, g.x, g.y, g.c, s.trial_id()).expect("string write");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_one_trial() {
        let g = parse_gaze("t,x,y,c,trial_id\n0,0.1,0.2,0.9,4\n0.01,0.1,0.2,0.9,4\n0.02,0.1,0.2,0.9,4\n", "g").unwrap();
        assert_eq!(g.streams.len(), 1);
        assert_eq!(g.streams[0].len(), 3);
        assert_eq!(g.streams[0].trial_id(), 4);
        assert_eq!(g.clamped, 0);
    }

    #[test]
    fn confidence_out_of_range_is_an_error() {
        let err = parse_gaze("t,x,y,c,trial_id\n0,0.1,0.2,1.5,4\n", "g").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn coordinates_are_clamped_and_counted() {
        let g = parse_gaze("t,x,y,c,trial_id\n0,-0.1,1.2,0.9,1\n1,0.5,0.5,0.9,1\n", "g").unwrap();
        assert_eq!(g.clamped, 1);
        let s = g.streams[0].samples()[0];
        assert_eq!((s.x, s.y), (0.0, 1.0));
    }

    #[test]
    fn shuffled_time_is_sorted() {
        let g = parse_gaze(
            "t,x,y,c,trial_id\n0.3,0.1,0.1,1,2\n0.1,0.2,0.2,1,2\n0.2,0.3,0.3,1,2\n0.0,0.5,0.5,1,1\n",
            "g",
        )
        .unwrap();
        assert_eq!(g.streams.len(), 2);
        let ts: Vec<f64> = g.streams[1].samples().iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn write_then_read() {
        let s = GazeStream::new(
            9,
            vec![
                GazeSample { t: 0.0, x: 0.25, y: 0.5, c: 0.75 },
                GazeSample { t: 0.5, x: 0.125, y: 0.5, c: 1.0 },
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        write_gaze_csv(std::slice::from_ref(&s), &p).unwrap();
        assert_eq!(read_gaze_csv(&p).unwrap().streams, vec![s]);
    }
}
