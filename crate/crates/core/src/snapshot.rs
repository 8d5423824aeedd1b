//! Binary field snapshots.
//!
//! Layout: the 8 bytes `MVF1SNAP`, a little-endian `u64` header length, a
//! UTF-8 JSON header `{nx, ny, lx, ly, components, bc, time}`, then
//! `components·(nx+1)·(ny+1)` little-endian `f64` values, component-major,
//! each component row-major with `y` as the outer index.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bc, Field, Grid};

pub const MAGIC: &[u8; 8] = b"MVF1SNAP";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    components: usize,
    bc: Bc,
    time: f64,
}

/// A decoded snapshot with its component count known only at run time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub bc: Bc,
    pub components: usize,
    pub time: f64,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn from_field<const C: usize>(f: &Field<C>, time: f64) -> Self {
        Snapshot {
            grid: *f.grid(),
            bc: f.bc(),
            components: C,
            time,
            data: f.data().to_vec(),
        }
    }

    pub fn into_field<const C: usize>(self) -> Result<Field<C>> {
        if self.components != C {
            return Err(Error::Format(format!(
                "expected {C} components, snapshot has {}",
                self.components
            )));
        }
        Field::from_data(self.grid, self.bc, self.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            nx: self.grid.nx,
            ny: self.grid.ny,
            lx: self.grid.lx,
            ly: self.grid.ly,
            components: self.components,
            bc: self.bc,
            time: self.time,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing MVF1SNAP magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let h: Header = serde_json::from_slice(body)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let grid = Grid::new(h.nx, h.ny, h.lx, h.ly)?;
        let count = h.components * grid.len();
        let raw = &bytes[16 + hlen..];
        if raw.len() != 8 * count {
            return Err(Error::Format(format!(
                "expected {} data bytes, found {}",
                8 * count,
                raw.len()
            )));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Snapshot {
            grid,
            bc: h.bc,
            components: h.components,
            time: h.time,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn write_snapshot<const C: usize>(path: &Path, f: &Field<C>, time: f64) -> Result<()> {
    Snapshot::from_field(f, time).write(path)
}

pub fn read_snapshot<const C: usize>(path: &Path) -> Result<(Field<C>, f64)> {
    let s = Snapshot::read(path)?;
    let t = s.time;
    Ok((s.into_field()?, t))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
