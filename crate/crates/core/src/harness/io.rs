//! Output formats.
//!
//! Fields use the `DKF1` container: the magic bytes `DKF1`, a little-endian
//! `u64` axis count, one `u64` length per axis, an `f64` time stamp, then the
//! values as row-major `f64`. A trajectory file is a plain concatenation of
//! frames. Particle snapshots are stored as 2-axis frames of shape `(N, d)`.
//!
//! Scalar diagnostics are CSV with a header row; run metadata is JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::grid::CellField;
use crate::particles::ParticleEnsemble;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DKF1";

/// One array with its shape and time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub shape: Vec<usize>,
    pub t: f64,
    pub values: Vec<f64>,
}

impl Frame {
    pub fn from_field(field: &CellField, t: f64) -> Self {
        Frame { shape: field.grid().cell_counts().to_vec(), t, values: field.values.clone() }
    }

    pub fn from_particles(ens: &ParticleEnsemble) -> Self {
        let d = ens.grid.dims();
        let values = ens.positions.iter().flat_map(|p| p[..d].to_vec()).collect();
        Frame { shape: vec![ens.len(), d], t: ens.t, values }
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let expected: usize = frame.shape.iter().product();
    if expected != frame.values.len() {
        return Err(Error::Format(format!("shape {:?} does not match {} values", frame.shape, frame.values.len())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&(frame.shape.len() as u64).to_le_bytes())?;
    for &n in &frame.shape {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&frame.t.to_le_bytes())?;
    for v in &frame.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads the next frame, or `None` at a clean end of input.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let k = r.read(&mut magic[got..])?;
        if k == 0 {
            break;
        }
        got += k;
    }
    if got == 0 {
        return Ok(None);
    }
    if got < 4 || &magic != MAGIC {
        return Err(Error::Format("bad DKF1 magic".into()));
    }
    let dims = read_u64(r)? as usize;
    if dims > 16 {
        return Err(Error::Format(format!("implausible axis count {dims}")));
    }
    let mut shape = Vec::with_capacity(dims);
    for _ in 0..dims {
        shape.push(read_u64(r)? as usize);
    }
    let t = f64::from_le_bytes(read_u64(r)?.to_le_bytes());
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Some(Frame { shape, t, values }))
}

pub fn write_frames(path: &Path, frames: &[Frame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        write_frame(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<Frame>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(f) = read_frame(&mut r)? {
        out.push(f);
    }
    Ok(out)
}

/// Header of the per-realization diagnostics CSV.
pub fn csv_header(bands: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "mass",
        "l2_sq",
        "entropy",
        "hminus1_sq",
        "log_int",
        "large_part",
        "dissipation",
        "clipped_mass",
        "boundary_min",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(bands.iter().map(|b| format!("q_band_{b}")));
    h
}

/// Columns of a record in [`csv_header`] order.
pub fn record_row(r: &DiagnosticsRecord) -> Vec<f64> {
    let mut row = vec![
        r.t,
        r.mass,
        r.l2_sq,
        r.entropy,
        r.hminus1_sq,
        r.log_int,
        r.large_part,
        r.dissipation,
        r.clipped_mass,
        r.boundary_min,
    ];
    row.extend(r.q_bands.iter().map(|(_, v)| *v));
    row
}

/// A header and rows of reals. Floats are written in shortest round-trip
/// form, so reading back is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn from_records(records: &[DiagnosticsRecord], bands: &[f64]) -> Self {
        Table { header: csv_header(bands), rows: records.iter().map(record_row).collect() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty CSV", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| Error::Format(format!("row {}: {e}", i + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(Error::Format(format!("row {} has {} columns, header {}", i + 1, row.len(), header.len())));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }
}

/// Run metadata written as `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub code_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub realizations: usize,
    /// `complete` or `partial`.
    pub status: String,
    pub failed: Vec<FailedRealization>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRealization {
    pub realization: u64,
    pub error: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(e.to_string()))
}
