//! On-disk chip format.
//!
//! A chip file is little-endian:
//!
//! | offset | size        | field                                        |
//! |--------|-------------|----------------------------------------------|
//! | 0      | 8           | magic `SAREOCHP`                             |
//! | 8      | 4           | format version (1)                           |
//! | 12     | 4 × 3       | channels, height, width                      |
//! | 24     | 1           | value range (0 unit_signed, 1 unit, 2 raw)   |
//! | 25     | 1           | nodata mask present (0/1)                    |
//! | 26     | 2           | reserved, zero                               |
//! | 28     | 4·C·H·W     | `f32` values, channel-major                  |
//! | …      | H·W         | mask bytes (0/1), only if present            |
//!
//! Each chip has a JSON sidecar `<file>.json` holding the modality, value
//! range, geo placement and parent scene id.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GeoInfo, ModalityKind, RasterChip, ValueRange};

pub const MAGIC: &[u8; 8] = b"SAREOCHP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipSidecar {
    pub modality: ModalityKind,
    pub value_range: ValueRange,
    pub geo: Option<GeoInfo>,
    pub source_id: String,
}

pub fn encode(chip: &RasterChip) -> Vec<u8> {
    let n = chip.data().len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n + chip.height() * chip.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [chip.channels(), chip.height(), chip.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(chip.value_range().code());
    out.push(chip.nodata_mask().is_some() as u8);
    out.extend_from_slice(&[0, 0]);
    for v in chip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(mask) = chip.nodata_mask() {
        out.extend(mask.iter().map(|&b| b as u8));
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<RasterChip> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::format("chip file", "missing SAREOCHP magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let version = u32_at(8) as u32;
    if version != VERSION {
        return Err(Error::format("chip file", format!("unsupported version {version}")));
    }
    let (c, h, w) = (u32_at(12), u32_at(16), u32_at(20));
    let range = ValueRange::from_code(bytes[24])
        .ok_or_else(|| Error::format("chip file", format!("bad value range code {}", bytes[24])))?;
    let has_mask = match bytes[25] {
        0 => false,
        1 => true,
        b => return Err(Error::format("chip file", format!("bad mask flag {b}"))),
    };
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("chip file", "dimensions overflow"))?;
    let expected = HEADER_LEN + 4 * n + if has_mask { h * w } else { 0 };
    if bytes.len() != expected {
        return Err(Error::format(
            "chip file",
            format!("expected {expected} bytes for {c}x{h}x{w}, found {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + 4 * n]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let chip = RasterChip::new(c, h, w, data, range)?;
    if has_mask {
        let mask = bytes[HEADER_LEN + 4 * n..].iter().map(|&b| b != 0).collect();
        chip.with_nodata_mask(mask)
    } else {
        Ok(chip)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_chip(path: &Path, chip: &RasterChip, sidecar: &ChipSidecar) -> Result<()> {
    write_atomic(path, &encode(chip))?;
    let json = serde_json::to_vec_pretty(sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), &json)
}

/// Reads a chip; the sidecar's geo placement is attached when present.
pub fn read_chip(path: &Path) -> Result<RasterChip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut chip = decode(&bytes)?;
    if let Some(side) = read_sidecar(path)? {
        if side.value_range != chip.value_range() {
            return Err(Error::format("chip sidecar", "value range disagrees with chip header"));
        }
        chip.geo = side.geo;
    }
    Ok(chip)
}

pub fn read_sidecar(path: &Path) -> Result<Option<ChipSidecar>> {
    let p = sidecar_path(path);
    match fs::read(&p) {
        Ok(b) => serde_json::from_slice(&b)
            .map(Some)
            .map_err(|e| Error::format("chip sidecar", e.to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(p, e)),
    }
}
