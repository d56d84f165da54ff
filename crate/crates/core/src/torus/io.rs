//! Grid-field serialization: a small binary container and CSV export.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! bytes 0..4   magic "VLAB"
//! bytes 4..8   format version (u32), currently 1
//! bytes 8..12  N, cells per axis (u32)
//! bytes 12..16 number of fields (u32)
//! then         fields back to back, each N*N f64 values, row-major
//! ```
//!
//! Every field in one container shares the grid. CSV export writes one sample
//! per line as `i,j,x1,x2,value` with a header row; floats use the shortest
//! representation that round-trips, so the files are bit-faithful.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{LabError, Result};

use super::{ScalarGridField, TorusGrid};

pub const MAGIC: [u8; 4] = *b"VLAB";
pub const VERSION: u32 = 1;

/// Writes fields into one container; all grids must match.
pub fn write_fields(w: &mut impl Write, fields: &[&ScalarGridField]) -> Result<()> {
    let first = fields.first().ok_or(LabError::InvalidParameter {
        name: "fields",
        reason: "container needs at least one field".into(),
    })?;
    let n = first.grid().n();
    for f in fields.iter() {
        if f.grid().n() != n {
            return Err(LabError::GridMismatch {
                left: n,
                right: f.grid().n(),
            });
        }
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    for f in fields {
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a container back; validates magic, version and grid size.
pub fn read_fields(r: &mut impl Read) -> Result<Vec<ScalarGridField>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(LabError::Format(format!(
            "bad magic {:02x?}, expected \"VLAB\"",
            magic
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(LabError::Format(format!(
            "unsupported container version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    let grid = TorusGrid::new(n).map_err(|_| {
        LabError::Format(format!("container grid size {n} is not a power of two >= 4"))
    })?;
    r.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    let mut fields = Vec::with_capacity(count);
    let mut buf = vec![0u8; n * n * 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        fields.push(ScalarGridField::from_values(grid, values)?);
    }
    Ok(fields)
}

pub fn write_fields_path(path: &Path, fields: &[&ScalarGridField]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_fields(&mut w, fields)?;
    w.flush()?;
    Ok(())
}

pub fn read_fields_path(path: &Path) -> Result<Vec<ScalarGridField>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_fields(&mut r)
}

/// CSV export with header `i,j,x1,x2,value`.
pub fn write_csv(w: &mut impl Write, f: &ScalarGridField) -> Result<()> {
    writeln!(w, "i,j,x1,x2,value")?;
    let grid = f.grid();
    let n = grid.n();
    for j in 0..n {
        for i in 0..n {
            let (x1, x2) = grid.point(i, j);
            writeln!(w, "{i},{j},{x1},{x2},{}", f.get(i as i64, j as i64))?;
        }
    }
    Ok(())
}
