//! Plain-text EEG recordings.
//!
//! ```text
//! # sample_rate_hz=512
//! Fp1,Fp2,...
//! 1.25,-0.5,...        one row per sample, one column per channel
//! ```
//!
//! Trial onsets live in a separate JSON-lines file, one `{"sample":N,"trial":ID}`
//! object per line in increasing sample order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{check_events, Event, Recording};

const RATE_PREFIX: &str = "# sample_rate_hz=";

pub fn read_eeg_csv(data_path: &Path, events_path: &Path) -> Result<Recording> {
    let file = File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    let (rate, channels, data) = parse_eeg(BufReader::with_capacity(1 << 20, file), &data_path.display().to_string())?;
    let events = read_events(events_path)?;
    Recording::new(rate, channels, data, events)
}

pub(crate) fn parse_eeg<R: BufRead>(mut reader: R, name: &str) -> Result<(f64, Vec<String>, Array2<f64>)> {
    let mut line = String::new();
    let io_err = |e: std::io::Error| Error::io(Path::new(name), e);

    reader.read_line(&mut line).map_err(io_err)?;
    let header = line.trim_end_matches(['\n', '\r']);
    let rate: f64 = header
        .strip_prefix(RATE_PREFIX)
        .ok_or_else(|| Error::parse(name, 1, format!("expected header `{RATE_PREFIX}<float>`")))?
        .parse()
        .map_err(|_| Error::parse(name, 1, "sample rate is not a number"))?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::parse(name, 1, "sample rate must be positive"));
    }

    line.clear();
    reader.read_line(&mut line).map_err(io_err)?;
    let names = line.trim_end_matches(['\n', '\r']);
    if names.is_empty() {
        return Err(Error::parse(name, 2, "missing channel-name line"));
    }
    let channels: Vec<String> = names.split(',').map(|s| s.to_string()).collect();
    if channels.iter().any(|c| c.is_empty()) {
        return Err(Error::parse(name, 2, "empty channel name"));
    }

    let n_ch = channels.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    let mut line_no = 2;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        line_no += 1;
        let row = line.trim_end_matches(['\n', '\r']);
        let mut n = 0;
        for field in row.split(',') {
            if n == n_ch {
                return Err(Error::parse(name, line_no, format!("ragged row: more than {n_ch} values")));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(name, line_no, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(name, line_no, "non-finite sample"));
            }
            columns[n].push(v);
            n += 1;
        }
        if n != n_ch {
            return Err(Error::parse(name, line_no, format!("ragged row: {n} values, expected {n_ch}")));
        }
    }
    let n_samples = columns[0].len();
    let mut data = Array2::<f64>::zeros((n_ch, n_samples));
    for (mut row, col) in data.rows_mut().into_iter().zip(columns.iter_mut()) {
        row.as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(col);
        *col = Vec::new();
    }
    Ok((rate, channels, data))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_events(&text, &path.display().to_string())
}

pub(crate) fn parse_events(text: &str, name: &str) -> Result<Vec<Event>> {
    let mut events: Vec<Event> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(line)
            .map_err(|err| Error::parse(name, i + 1, format!("bad event: {err}")))?;
        if let Some(prev) = events.last() {
            if e.sample <= prev.sample {
                return Err(Error::parse(name, i + 1, "events not monotone"));
            }
        }
        events.push(e);
    }
    check_events(&events)?;
    Ok(events)
}

pub fn write_eeg_csv(rec: &Recording, data_path: &Path, events_path: &Path) -> Result<()> {
    let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    write_eeg(rec, &mut w).map_err(|e| Error::io(data_path, e))?;
    w.flush().map_err(|e| Error::io(data_path, e))?;
    write_events(rec.events(), events_path)
}

pub(crate) fn write_eeg<W: Write>(rec: &Recording, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{RATE_PREFIX}{}", rec.sample_rate_hz())?;
    writeln!(w, "{}", rec.channels().join(","))?;
    let data = rec.data();
    let (n_ch, n) = data.dim();
    // Transpose in blocks so the row-major output does not stride across
    // every channel for each sample.
    const BLOCK: usize = 1024;
    let mut block = vec![0.0f64; BLOCK * n_ch];
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        for c in 0..n_ch {
            let row = data.row(c);
            for t in 0..len {
                block[t * n_ch + c] = row[start + t];
            }
        }
        for t in 0..len {
            for c in 0..n_ch {
                if c > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{}", block[t * n_ch + c])?;
            }
            w.write_all(b"\n")?;
        }
        start += len;
    }
    Ok(())
}

pub fn write_events(events: &[Event], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_recording() -> Recording {
        Recording::new(
            512.0,
            vec!["Fp1".into(), "Cz".into()],
            array![[1.5, -2.0, 0.25, 3.0], [0.0, 1e-3, -7.125, 2.5]],
            vec![Event { sample: 0, trial: 1 }, Event { sample: 2, trial: 2 }],
        )
        .unwrap()
    }

    #[test]
    fn two_channel_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (d, e) = (dir.path().join("rec.csv"), dir.path().join("ev.jsonl"));
        let rec = sample_recording();
        write_eeg_csv(&rec, &d, &e).unwrap();
        let back = read_eeg_csv(&d, &e).unwrap();
        assert_eq!(back.data().dim(), (2, 4));
        assert_eq!(back, rec);
        let text = std::fs::read_to_string(&d).unwrap();
        assert!(text.starts_with("# sample_rate_hz=512\nFp1,Cz\n1.5,0\n"));
    }

    #[test]
    fn decreasing_events_are_rejected() {
        let err = parse_events("{\"sample\":10,\"trial\":1}\n{\"sample\":5,\"trial\":2}\n", "ev").unwrap_err();
        assert!(err.to_string().contains("events not monotone"), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn malformed_header_and_ragged_rows_name_the_line() {
        let err = parse_eeg("sample_rate=512\na\n1\n".as_bytes(), "x").unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let err = parse_eeg("# sample_rate_hz=512\na,b\n1,2\n3\n".as_bytes(), "x").unwrap_err();
        assert!(err.to_string().contains("line 4") && err.to_string().contains("ragged"), "{err}");
        let err = parse_eeg("# sample_rate_hz=512\na,b\n1,2,3\n".as_bytes(), "x").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }

    fn random_recording(seed: u64) -> Recording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_ch = rng.random_range(1..6);
        let n = rng.random_range(1..200);
        let rate = [128.0, 250.0, 512.0, 1000.5][rng.random_range(0..4)];
        let data = Array2::from_shape_fn((n_ch, n), |_| {
            // mix of quantized and full-precision values
            if rng.random_bool(0.5) {
                (rng.random_range(-100.0..100.0f64) * 1000.0).round() / 1000.0
            } else {
                rng.random_range(-1e3..1e3)
            }
        });
        let mut events = Vec::new();
        let mut s = 0;
        let mut trial = 1;
        while s < n {
            events.push(Event { sample: s, trial });
            s += rng.random_range(1..40);
            trial += rng.random_range(1..4);
        }
        let channels = (0..n_ch).map(|i| format!("C{i}")).collect();
        Recording::new(rate, channels, data, events).unwrap()
    }

    #[test]
    fn canonical_files_are_byte_identical_after_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..20 {
            let rec = random_recording(seed);
            let (d1, e1) = (dir.path().join("a.csv"), dir.path().join("a.jsonl"));
            let (d2, e2) = (dir.path().join("b.csv"), dir.path().join("b.jsonl"));
            write_eeg_csv(&rec, &d1, &e1).unwrap();
            let back = read_eeg_csv(&d1, &e1).unwrap();
            write_eeg_csv(&back, &d2, &e2).unwrap();
            assert_eq!(std::fs::read(&d1).unwrap(), std::fs::read(&d2).unwrap(), "seed {seed}");
            assert_eq!(std::fs::read(&e1).unwrap(), std::fs::read(&e2).unwrap());
        }
    }

    proptest! {
        #[test]
        fn any_finite_value_roundtrips(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            let rec = Recording::new(256.0, vec!["a".into()], array![[v]], vec![]).unwrap();
            let mut buf = Vec::new();
            write_eeg(&rec, &mut buf).unwrap();
            let (_, _, data) = parse_eeg(buf.as_slice(), "mem").unwrap();
            prop_assert_eq!(data[[0, 0]].to_bits(), v.to_bits());
        }
    }
}
