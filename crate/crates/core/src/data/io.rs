//! DPNV volume files and PGM map export.
//!
//! DPNV layout: magic `DPNV`, version (u32 LE), height, width, depth (u32 LE
//! each), then `height·width·depth` voxels as f32 LE in volume index order.
//! Maps use the same layout with depth 1.

use std::fs;
use std::path::Path;

use super::{ProjectionMap, Volume};
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: [u8; 4] = *b"DPNV";
pub const VOLUME_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

fn encode(height: usize, width: usize, depth: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(&VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for d in [height, width, depth] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != VOLUME_MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    if bytes[..4] != VOLUME_MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let version = word(1);
    if version != VOLUME_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported volume version {version}"),
        });
    }
    let (h, w, d) = (word(2) as usize, word(3) as usize, word(4) as usize);
    let payload = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::DimOverflow {
            path: path.to_path_buf(),
            dims: vec![h as u64, w as u64, d as u64],
        })?;
    if payload == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("empty volume {h}x{w}x{d}"),
        });
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: payload as u64,
            available: body.len() as u64,
        });
    }
    let values = body[..payload]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok((h, w, d, values))
}

fn bad_magic(bytes: &[u8], path: &Path) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: VOLUME_MAGIC,
        found: bytes[..4].try_into().expect("4 bytes"),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes the voxels as f32; the label and id are not stored.
pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    if let Some(bad) = v.voxels.iter().find(|x| !x.is_finite()) {
        return Err(Error::contract(format!("volume {} has non-finite voxel {bad}", v.id)));
    }
    write(path, &encode(v.height, v.width, v.depth, &v.voxels))
}

/// Reads a DPNV file; the id becomes the file stem.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let (h, w, d, values) = decode(&read(path)?, path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Volume::new(id, h, w, d, values)
}

/// Lossless-at-f32 map storage (a DPNV file with depth 1).
pub fn save_map(map: &ProjectionMap, path: &Path) -> Result<()> {
    write(path, &encode(map.height, map.width, 1, &map.values))
}

pub fn load_map(path: &Path) -> Result<ProjectionMap> {
    let (h, w, d, values) = decode(&read(path)?, path)?;
    if d != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("map file has depth {d}"),
        });
    }
    ProjectionMap::new(h, w, values)
}

/// Writes an 8-bit binary PGM (`round(255·v)`, halves rounded up) and a
/// `.dpnv` sidecar next to it with the exact values.
pub fn save_map_pgm(map: &ProjectionMap, path: &Path) -> Result<()> {
    if let Some(bad) = map.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("map value {bad} lies outside [0, 1]")));
    }
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|v| (255.0 * v + 0.5).floor() as u8));
    write(path, &out)?;
    save_map(map, &path.with_extension("dpnv"))
}
