//! Binary grid files.
//!
//! Layout, all little-endian:
//!
//! | offset | size    | field                       |
//! |--------|---------|-----------------------------|
//! | 0      | 4       | magic `OCGP`                |
//! | 4      | 2       | format version (u16)        |
//! | 6      | 8       | voxel count `N` (u64)       |
//! | 14     | 2       | class count `K` (u16)       |
//! | 16     | `4·N·K` | row-major `f32` probabilities |

use std::path::Path;

use crate::dist::VoxelProbabilityGrid;
use crate::error::{Error, Result};
use crate::SampleId;

pub const GRID_MAGIC: [u8; 4] = *b"OCGP";
pub const GRID_VERSION: u16 = 1;
/// Row-sum tolerance for `f32` payloads.
pub const GRID_ROW_TOLERANCE: f64 = 1e-4;
const HEADER_LEN: usize = 16;

fn encode(num_classes: usize, payload: impl ExactSizeIterator<Item = f32>) -> Result<Vec<u8>> {
    let k = u16::try_from(num_classes)
        .map_err(|_| Error::InvalidConfig(format!("{num_classes} classes do not fit in u16")))?;
    let values = payload.len();
    let n = (values / num_classes) as u64;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values);
    out.extend_from_slice(&GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes a grid, narrowing probabilities to `f32`.
pub fn write_grid(path: &Path, grid: &VoxelProbabilityGrid) -> Result<()> {
    let bytes = encode(grid.num_classes(), grid.as_slice().iter().map(|&v| v as f32))?;
    super::write_atomic(path, &bytes)
}

/// Writes a raw row-major `f32` payload without validating rows.
pub fn write_grid_f32(path: &Path, num_classes: usize, payload: &[f32]) -> Result<()> {
    if num_classes == 0 || payload.len() % num_classes != 0 {
        return Err(Error::DimensionMismatch {
            expected: num_classes,
            got: payload.len(),
        });
    }
    let bytes = encode(num_classes, payload.iter().copied())?;
    super::write_atomic(path, &bytes)
}

/// Reads and validates a grid file, widening to `f64`.
pub fn read_grid(path: &Path, sample_id: SampleId) -> Result<VoxelProbabilityGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, sample_id)
}

fn decode(bytes: &[u8], sample_id: SampleId) -> Result<VoxelProbabilityGrid> {
    if bytes.len() < 4 || bytes[..4] != GRID_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != GRID_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().expect("8-byte slice"));
    let k = u16::from_le_bytes([bytes[14], bytes[15]]) as u64;
    let expected = n
        .checked_mul(k)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::InvalidConfig("grid dimensions overflow".into()))?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingData(found - expected));
    }
    let probs: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    VoxelProbabilityGrid::with_tolerance(sample_id, k as usize, probs, GRID_ROW_TOLERANCE)
}
