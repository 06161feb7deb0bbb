//! `RACHNN1` checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       7 bytes  "RACHNN1"
//! layers      u32
//! per layer   u8 kind (0 dense, 1 lstm), u8 activation (0 identity, 1 relu, 2 tanh),
//!             u32 rows, u32 cols
//! parameters  per layer: rows*cols weights row-major, then rows bias values, f64
//! ```
//!
//! A dense layer has `rows = out`, `cols = in`. An LSTM cell has
//! `rows = 4H`, `cols = D + H` with gate blocks stacked input, forget,
//! candidate, output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Activation, DenseLayer, LstmCell, LstmRegressor, Mlp};

pub const MAGIC: &[u8; 7] = b"RACHNN1";

#[derive(Debug, Clone, PartialEq)]
pub enum LayerRecord {
    Dense(DenseLayer),
    Lstm(LstmCell),
}

impl LayerRecord {
    fn header(&self) -> (u8, u8, u32, u32) {
        match self {
            LayerRecord::Dense(l) => (0, l.activation.code(), l.out_dim() as u32, l.in_dim() as u32),
            LayerRecord::Lstm(c) => (1, 0, 4 * c.hidden_size() as u32, (c.input_size() + c.hidden_size()) as u32),
        }
    }

    fn params(&self) -> (&[f64], &[f64]) {
        match self {
            LayerRecord::Dense(l) => (&l.weights, &l.bias),
            LayerRecord::Lstm(c) => (&c.weights, &c.bias),
        }
    }
}

pub fn encode_checkpoint(layers: &[LayerRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        let (kind, act, rows, cols) = layer.header();
        out.push(kind);
        out.push(act);
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
    }
    for layer in layers {
        let (w, b) = layer.params();
        for v in w.iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<LayerRecord>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        headers.push((r.u8()?, r.u8()?, r.u32()? as usize, r.u32()? as usize));
    }
    let mut layers = Vec::with_capacity(headers.len());
    for (kind, act, rows, cols) in headers {
        let weights = r.f64s(rows * cols)?;
        let bias = r.f64s(rows)?;
        let layer = match kind {
            0 => LayerRecord::Dense(DenseLayer::from_parts(cols, rows, weights, bias, Activation::from_code(act)?)?),
            1 => {
                if rows % 4 != 0 || cols < rows / 4 {
                    return Err(Error::Checkpoint(format!("bad LSTM dims {rows}x{cols}")));
                }
                let hidden = rows / 4;
                LayerRecord::Lstm(LstmCell::from_parts(cols - hidden, hidden, weights, bias)?)
            }
            other => return Err(Error::Checkpoint(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(layers)
}

pub fn write_checkpoint(path: &Path, layers: &[LayerRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(layers))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<LayerRecord>> {
    decode_checkpoint(&std::fs::read(path)?)
}

impl Mlp {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers.iter().cloned().map(LayerRecord::Dense).collect()
    }

    /// Consumes dense layers from the front of `records` until the input size chain
    /// ends at `out_dim`.
    pub fn take_from(records: &mut std::collections::VecDeque<LayerRecord>, layer_count: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            match records.pop_front() {
                Some(LayerRecord::Dense(l)) => {
                    if let Some(prev) = layers.last() {
                        let prev: &DenseLayer = prev;
                        if prev.out_dim() != l.in_dim() {
                            return Err(Error::Checkpoint("dense layer sizes do not chain".into()));
                        }
                    }
                    layers.push(l)
                }
                _ => return Err(Error::Checkpoint("expected a dense layer".into())),
            }
        }
        Ok(Mlp { layers })
    }
}

impl LstmRegressor {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        vec![LayerRecord::Lstm(self.cell.clone()), LayerRecord::Dense(self.head.clone())]
    }

    pub fn take_from(records: &mut std::collections::VecDeque<LayerRecord>) -> Result<Self> {
        let cell = match records.pop_front() {
            Some(LayerRecord::Lstm(c)) => c,
            _ => return Err(Error::Checkpoint("expected an LSTM layer".into())),
        };
        let head = match records.pop_front() {
            Some(LayerRecord::Dense(l)) if l.in_dim() == cell.hidden_size() => l,
            _ => return Err(Error::Checkpoint("expected a dense head matching the LSTM".into())),
        };
        Ok(Self { cell, head })
    }
}
