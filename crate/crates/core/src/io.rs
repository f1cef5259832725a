//! Binary and CSV serialization of fields and particle snapshots.
//!
//! Field record: magic "VPMEF1", n as little-endian u32, the box half-width
//! as a little-endian f64, then n^3 f64 samples in x-fastest order.
//!
//! Snapshot record: magic "VPMEP1", N as u64, time as f64, then N records of
//! (id u64, X three f64, V three f64), all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;
use crate::kinetics::{ParticleEnsemble, Snapshot};
use crate::scalar::Real;

const FIELD_MAGIC: &[u8; 6] = b"VPMEF1";
const SNAPSHOT_MAGIC: &[u8; 6] = b"VPMEP1";

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn write_field<T: Real>(field: &ScalarField<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(field.grid().n() as u32).to_le_bytes())?;
    w.write_all(&field.grid().half_width().f64().to_le_bytes())?;
    for &v in field.values() {
        w.write_all(&v.f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field<T: Real>(path: &Path) -> Result<ScalarField<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(format_err(path, "bad magic; expected VPMEF1"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let l = f64::from_le_bytes(b8);
    let grid = GridSpec::new(T::of(l), n)
        .map_err(|e| format_err(path, format!("invalid grid header: {e}")))?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut b8)?;
        values.push(T::of(f64::from_le_bytes(b8)));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(format_err(path, "trailing bytes after field payload"));
    }
    ScalarField::from_values(grid, values)
}

/// CSV export (x,y,z,value), one row per sample in x-fastest order.
pub fn field_to_csv<T: Real>(field: &ScalarField<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,y,z,value")?;
    let grid = field.grid();
    for (flat, &v) in field.values().iter().enumerate() {
        let p = grid.position(flat);
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            p[0].f64(),
            p[1].f64(),
            p[2].f64(),
            v.f64()
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_snapshot<T: Real>(snap: &Snapshot<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    let ens = &snap.ensemble;
    w.write_all(&(ens.count() as u64).to_le_bytes())?;
    w.write_all(&snap.time.f64().to_le_bytes())?;
    for i in 0..ens.count() {
        w.write_all(&ens.ids()[i].to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&ens.positions()[i][a].f64().to_le_bytes())?;
        }
        for a in 0..3 {
            w.write_all(&ens.velocities()[i][a].f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<T: Real>(path: &Path) -> Result<Snapshot<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(format_err(path, "bad magic; expected VPMEP1"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    let mut ids = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    let read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        ids.push(u64::from_le_bytes(b8));
        let x = [
            T::of(read_f64(&mut r)?),
            T::of(read_f64(&mut r)?),
            T::of(read_f64(&mut r)?),
        ];
        let v = [
            T::of(read_f64(&mut r)?),
            T::of(read_f64(&mut r)?),
            T::of(read_f64(&mut r)?),
        ];
        positions.push(x);
        velocities.push(v);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(format_err(path, "trailing bytes after snapshot payload"));
    }
    Ok(Snapshot {
        time: T::of(time),
        ensemble: ParticleEnsemble::new(positions, velocities, ids)
            .map_err(|e| format_err(path, format!("invalid ensemble: {e}")))?,
    })
}
