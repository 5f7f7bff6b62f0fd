//! Feature tables as CSV: `trial_id,window,label,<columns...>`.
//!
//! `window` is empty for per-trial rows. EEG column names encode
//! `channel|window|feature` (or `channel|feature` for per-window rows).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ConditionLabel, FeatureTable, RowKey};

const FIXED: [&str; 3] = ["trial_id", "window", "label"];

pub fn write_features_csv(table: &FeatureTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&FIXED.join(","));
    for c in table.columns() {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for i in 0..table.n_rows() {
        let k = table.keys()[i];
        write!(out, "{},", k.trial_id).unwrap();
        if let Some(w) = k.window {
            write!(out, "{w}").unwrap();
        }
        write!(out, ",{}", table.labels()[i]).unwrap();
        for v in table.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<FeatureTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, &path.display().to_string())
}

pub(crate) fn parse_features(text: &str, name: &str) -> Result<FeatureTable> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse(name, 1, "empty feature file"))?
        .split(',')
        .collect();
    if header.len() < 3 || header[..3] != FIXED {
        return Err(Error::parse(name, 1, "header must start with trial_id,window,label"));
    }
    let columns: Vec<String> = header[3..].iter().map(|s| s.to_string()).collect();
    let (mut keys, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(Error::parse(name, line_no, format!("expected {} fields, got {}", header.len(), f.len())));
        }
        let trial_id = f[0].parse().map_err(|_| Error::parse(name, line_no, "bad trial id"))?;
        let window = if f[1].is_empty() {
            None
        } else {
            Some(f[1].parse().map_err(|_| Error::parse(name, line_no, "bad window index"))?)
        };
        let label = ConditionLabel::parse(f[2]).ok_or_else(|| Error::parse(name, line_no, format!("unknown label `{}`", f[2])))?;
        keys.push(RowKey { trial_id, window });
        labels.push(label);
        for v in &f[3..] {
            values.push(v.parse::<f64>().map_err(|_| Error::parse(name, line_no, format!("bad number `{v}`")))?);
        }
    }
    FeatureTable::new(columns, keys, labels, values)
}
