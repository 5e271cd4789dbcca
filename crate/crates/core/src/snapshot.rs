//! Binary snapshot files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GKMC" | version u8 = 1 | d u8 | N u64 | time f64 | kind u8 | payload
//! ```
//!
//! Kind 0 is a bit-packed occupancy (`ceil(N^d / 8)` bytes, site `x` in bit
//! `x % 8` of byte `x / 8`); kind 1 is `N^d` f64 values. Sites are row-major.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::lattice::{Configuration, DensityField, LatticeError, TorusShape};

pub const MAGIC: &[u8; 4] = b"GKMC";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u8),
    #[error("unknown payload kind {0}")]
    Kind(u8),
    #[error("truncated or oversized payload")]
    Length,
    #[error(transparent)]
    Shape(#[from] LatticeError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Occupancy(Configuration),
    Field(DensityField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub payload: Payload,
}

impl Snapshot {
    pub fn occupancy(time: f64, cfg: Configuration) -> Self {
        Snapshot {
            time,
            payload: Payload::Occupancy(cfg),
        }
    }

    pub fn field(time: f64, field: DensityField) -> Self {
        Snapshot {
            time,
            payload: Payload::Field(field),
        }
    }

    pub fn shape(&self) -> TorusShape {
        match &self.payload {
            Payload::Occupancy(c) => c.shape(),
            Payload::Field(f) => f.shape(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(23 + shape.sites() * 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(shape.dim() as u8);
        out.extend_from_slice(&(shape.side() as u64).to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        match &self.payload {
            Payload::Occupancy(c) => {
                out.push(0);
                out.extend_from_slice(&c.to_bytes());
            }
            Payload::Field(f) => {
                out.push(1);
                for v in f.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        if bytes.len() < 23 {
            return Err(SnapshotError::Length);
        }
        if &bytes[..4] != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(SnapshotError::Version(bytes[4]));
        }
        let dim = bytes[5] as usize;
        let side = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let time = f64::from_le_bytes(bytes[14..22].try_into().unwrap());
        let shape = TorusShape::new(dim, side)?;
        let body = &bytes[23..];
        let payload = match bytes[22] {
            0 => Payload::Occupancy(Configuration::from_bytes(shape, body).ok_or(SnapshotError::Length)?),
            1 => {
                if body.len() != shape.sites() * 8 {
                    return Err(SnapshotError::Length);
                }
                let values = body
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Payload::Field(DensityField::new(shape, values))
            }
            k => return Err(SnapshotError::Kind(k)),
        };
        Ok(Snapshot { time, payload })
    }

    pub fn write(&self, path: &Path) -> Result<(), SnapshotError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, SnapshotError> {
        Snapshot::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_round_trip() {
        let shape = TorusShape::new(2, 5).unwrap();
        let cfg = Configuration::from_fn(shape, |x| x % 3 == 0);
        let s = Snapshot::occupancy(0.25, cfg);
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"GKMC");
        assert_eq!(bytes.len(), 23 + 4);
        assert_eq!(Snapshot::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn field_round_trip_and_errors() {
        let shape = TorusShape::new(1, 7).unwrap();
        let s = Snapshot::field(1.5, DensityField::from_sites(shape, |c| c[0] as f64 / 7.0));
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 23 + 56);
        assert_eq!(Snapshot::from_bytes(&bytes).unwrap(), s);
        assert!(matches!(Snapshot::from_bytes(&bytes[..40]), Err(SnapshotError::Length)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::from_bytes(&bad), Err(SnapshotError::BadMagic)));
    }
}
