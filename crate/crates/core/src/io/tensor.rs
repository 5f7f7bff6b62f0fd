//! Little-endian binary tensor containers.
//!
//! Epochs (`CFQE`):
//!
//! | field            | type                                  |
//! |------------------|---------------------------------------|
//! | magic            | `b"CFQE"`                             |
//! | version          | u32 (= 1)                             |
//! | trials, channels, samples | 3 × u32                      |
//! | sample_rate_hz   | f64                                   |
//! | epoch_duration_s | f64                                   |
//! | channel names    | per channel: u16 byte length + UTF-8  |
//! | trial ids        | trials × u32                          |
//! | labels           | trials × u8 (0 control, 1 factual, 2 contextual) |
//! | data             | trials × channels × samples f32, row-major |
//!
//! Gaze traces (`CFQG`): magic, version u32, trials u32, channels u32 (= 2),
//! length u32, trial ids (u32 each), labels (u8 each), then f32 data
//! trials × 2 × length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::model::{ConditionLabel, EpochSet, TrialId};

pub const EPOCH_MAGIC: &[u8; 4] = b"CFQE";
pub const TRACE_MAGIC: &[u8; 4] = b"CFQG";
const VERSION: u32 = 1;

fn label_code(l: ConditionLabel) -> u8 {
    match l {
        ConditionLabel::Control => 0,
        ConditionLabel::FactualConfusion => 1,
        ConditionLabel::ContextualConfusion => 2,
    }
}

fn label_from_code(c: u8) -> Option<ConditionLabel> {
    ConditionLabel::ALL.get(c as usize).copied()
}

/// Trials × 2 × length gaze traces with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub trial_ids: Vec<TrialId>,
    pub labels: Vec<ConditionLabel>,
    /// trials × channels × length
    pub data: Array3<f64>,
}

impl TraceSet {
    pub fn new(trial_ids: Vec<TrialId>, labels: Vec<ConditionLabel>, data: Array3<f64>) -> Result<Self> {
        if trial_ids.len() != data.dim().0 || labels.len() != data.dim().0 {
            return Err(Error::invalid("trace provenance does not match tensor"));
        }
        Ok(Self { trial_ids, labels, data })
    }

    pub fn len(&self) -> usize {
        self.trial_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trial_ids.is_empty()
    }
}

pub(crate) struct Cursor<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) name: String,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::invalid(format!("{}: truncated container", self.name)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn labels(&mut self, n: usize) -> Result<Vec<ConditionLabel>> {
        self.take(n)?
            .iter()
            .map(|&c| label_from_code(c).ok_or_else(|| Error::invalid(format!("{}: bad label code {c}", self.name))))
            .collect()
    }

    fn f32_tensor(&mut self, dims: (usize, usize, usize)) -> Result<Array3<f64>> {
        let n = dims.0 * dims.1 * dims.2;
        let raw = self.take(n * 4)?;
        let v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Array3::from_shape_vec(dims, v).expect("shape checked"))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::invalid(format!("{}: trailing bytes", self.name)));
        }
        Ok(())
    }
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_f32<W: Write>(w: &mut W, data: ArrayView3<'_, f64>) -> std::io::Result<()> {
    for v in data.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_epochs(epochs: &EpochSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);
    let (t, c, s) = epochs.epochs().dim();
    w.write_all(EPOCH_MAGIC).map_err(io)?;
    for v in [VERSION, t as u32, c as u32, s as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&epochs.sample_rate_hz().to_le_bytes()).map_err(io)?;
    w.write_all(&epochs.epoch_duration_s().to_le_bytes()).map_err(io)?;
    for name in epochs.channels() {
        let b = name.as_bytes();
        w.write_all(&(b.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(b).map_err(io)?;
    }
    for id in epochs.trial_ids() {
        w.write_all(&id.to_le_bytes()).map_err(io)?;
    }
    let labels: Vec<u8> = epochs.labels().iter().map(|&l| label_code(l)).collect();
    w.write_all(&labels).map_err(io)?;
    write_f32(&mut w, epochs.epochs().view()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_epochs(path: &Path) -> Result<EpochSet> {
    let buf = read_all(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        name: path.display().to_string(),
    };
    if cur.take(4)? != EPOCH_MAGIC {
        return Err(Error::invalid(format!("{}: not an epoch container (bad magic)", cur.name)));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::invalid(format!("{}: unsupported version {version}", cur.name)));
    }
    let (t, c, s) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    let rate = cur.f64()?;
    let duration = cur.f64()?;
    let mut channels = Vec::with_capacity(c);
    for _ in 0..c {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::invalid(format!("{}: channel name is not UTF-8", cur.name)))?;
        channels.push(name.to_string());
    }
    let ids = (0..t).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
    let labels = cur.labels(t)?;
    let data = cur.f32_tensor((t, c, s))?;
    cur.finish()?;
    EpochSet::new(data, labels, ids, channels, rate, duration)
}

pub fn write_traces(traces: &TraceSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let (t, c, l) = traces.data.dim();
    w.write_all(TRACE_MAGIC).map_err(io)?;
    for v in [VERSION, t as u32, c as u32, l as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for id in &traces.trial_ids {
        w.write_all(&id.to_le_bytes()).map_err(io)?;
    }
    let labels: Vec<u8> = traces.labels.iter().map(|&l| label_code(l)).collect();
    w.write_all(&labels).map_err(io)?;
    write_f32(&mut w, traces.data.view()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_traces(path: &Path) -> Result<TraceSet> {
    let buf = read_all(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        name: path.display().to_string(),
    };
    if cur.take(4)? != TRACE_MAGIC {
        return Err(Error::invalid(format!("{}: not a trace container (bad magic)", cur.name)));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::invalid(format!("{}: unsupported version {version}", cur.name)));
    }
    let (t, c, l) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    let ids = (0..t).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
    let labels = cur.labels(t)?;
    let data = cur.f32_tensor((t, c, l))?;
    cur.finish()?;
    TraceSet::new(ids, labels, data)
}

/// Round every value through f32, matching what a container round trip yields.
pub fn quantize_f32(data: &mut Array3<f64>) {
    data.mapv_inplace(|v| v as f32 as f64);
}
