//! Layered-grid file format.
//!
//! A file is a sequence of records, each one prediction stack. All numbers
//! are little-endian:
//!
//! ```text
//! magic        4 bytes  "HPLG"
//! version      u32      1
//! width        u64
//! height       u64
//! resolution   f64      meters per cell
//! origin_x     f64
//! origin_y     f64
//! layers (T)   u64
//! dt           f64      seconds between layers
//! base_time    f64      layer k describes base_time + (k + 1)·dt
//! values       T·height·width f64, layer-major then row-major
//! ```

use std::io::{self, Read, Write};

use crate::occupancy::{GridSpec, OccupancyGrid};
use crate::predictor::PredictionStack;

pub const MAGIC: [u8; 4] = *b"HPLG";
pub const VERSION: u32 = 1;

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_stack<W: Write>(out: &mut W, stack: &PredictionStack) -> io::Result<()> {
    let s = &stack.spec;
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(s.width as u64).to_le_bytes())?;
    out.write_all(&(s.height as u64).to_le_bytes())?;
    for v in [s.resolution, s.origin[0], s.origin[1]] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(stack.steps() as u64).to_le_bytes())?;
    out.write_all(&stack.dt.to_le_bytes())?;
    out.write_all(&stack.base_time.to_le_bytes())?;
    let mut buf = Vec::with_capacity(s.len() * 8);
    for layer in &stack.layers {
        buf.clear();
        for v in layer.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    read_u64(r).map(f64::from_bits)
}

/// Reads the next record; `Ok(None)` at a clean end of input.
pub fn read_stack<R: Read>(input: &mut R) -> io::Result<Option<PredictionStack>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = input.read(&mut magic[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(invalid("truncated record header"))
            };
        }
        got += n;
    }
    if magic != MAGIC {
        return Err(invalid("bad magic"));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(invalid(format!("unsupported version {version}")));
    }
    let width = read_u64(input)? as usize;
    let height = read_u64(input)? as usize;
    let resolution = read_f64(input)?;
    let origin = [read_f64(input)?, read_f64(input)?];
    let steps = read_u64(input)? as usize;
    let dt = read_f64(input)?;
    let base_time = read_f64(input)?;
    let spec = GridSpec::new(width, height, resolution, origin).map_err(|e| invalid(e.to_string()))?;
    if steps == 0 || !(dt > 0.0) {
        return Err(invalid("stack needs at least one layer and dt > 0"));
    }
    let mut layers = Vec::with_capacity(steps);
    let mut buf = vec![0u8; spec.len() * 8];
    for _ in 0..steps {
        input.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        layers.push(OccupancyGrid::from_values(spec, values).map_err(|e| invalid(e.to_string()))?);
    }
    Ok(Some(PredictionStack {
        spec,
        layers,
        base_time,
        dt,
        clamped: vec![0; steps],
    }))
}

/// Reads every record until end of input.
pub fn read_all<R: Read>(input: &mut R) -> io::Result<Vec<PredictionStack>> {
    let mut out = Vec::new();
    while let Some(s) = read_stack(input)? {
        out.push(s);
    }
    Ok(out)
}
