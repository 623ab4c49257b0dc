//! File formats: atomic writes, float32 blobs, raymaps with JSON sidecars,
//! PLY point clouds and the schedule dump.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use raysfm_core::diffusion::NoiseSchedule;
use raysfm_core::geometry::{RayMap, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    atomic_write(path, &f32_bytes(values))
}

/// Reads a little-endian float32 blob of exactly `expected` values.
pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::data(format!(
            "{}: expected {expected} float32 values, found {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub const RAYMAP_LAYOUT: &str = "origin_xyzw,endpoint_xyzw";

/// Sidecar describing a raymap blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaymapHeader {
    pub shape: [usize; 3],
    pub layout: String,
    /// Per-cell validity, omitted when every cell is valid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<Vec<bool>>,
}

fn sidecar(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

/// Writes `<stem>.f32` (H×W×8, row-major) plus its `<stem>.json` sidecar.
pub fn write_raymap(blob: &Path, rm: &RayMap) -> Result<()> {
    let header = RaymapHeader {
        shape: [rm.rows, rm.cols, 8],
        layout: RAYMAP_LAYOUT.to_string(),
        valid: if rm.valid.iter().all(|v| *v) {
            None
        } else {
            Some(rm.valid.clone())
        },
    };
    write_f32(blob, rm.to_channels().into_iter().map(|v| v as f32))?;
    write_json(&sidecar(blob), &header)
}

pub fn read_raymap(blob: &Path) -> Result<RayMap> {
    let header: RaymapHeader = read_json(&sidecar(blob))?;
    let [rows, cols, ch] = header.shape;
    if ch != 8 || header.layout != RAYMAP_LAYOUT {
        return Err(Error::data(format!("{}: unsupported raymap layout", blob.display())));
    }
    let data: Vec<f64> = read_f32(blob, rows * cols * 8)?.into_iter().map(f64::from).collect();
    let mut rm = RayMap::from_channels(rows, cols, &data)?;
    if let Some(valid) = header.valid {
        if valid.len() != rows * cols {
            return Err(Error::data(format!("{}: validity list has the wrong length", blob.display())));
        }
        rm.valid = valid;
    }
    Ok(rm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Serializes points as a PLY vertex list with float32 coordinates.
pub fn ply_bytes(points: &[Vec3], format: PlyFormat) -> Vec<u8> {
    let tag = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {tag} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )
    .into_bytes();
    for p in points {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        match format {
            PlyFormat::Ascii => out.extend(format!("{} {} {}\n", xyz[0], xyz[1], xyz[2]).into_bytes()),
            PlyFormat::BinaryLittleEndian => out.extend(f32_bytes(xyz)),
        }
    }
    out
}

pub fn write_ply(path: &Path, points: &[Vec3], format: PlyFormat) -> Result<()> {
    atomic_write(path, &ply_bytes(points, format))
}

/// Reads back a file written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<Vec3>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::data(format!("{}: {msg}", path.display()));
    let end = b"end_header\n";
    let split = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| bad("missing end_header"))?
        + end.len();
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let mut format = None;
    let mut count = None;
    for line in header.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["element", "vertex", n] => count = n.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (format, count) = (format.ok_or_else(|| bad("unknown format"))?, count.ok_or_else(|| bad("no vertex count"))?);
    let body = &bytes[split..];
    let coords: Vec<f32> = match format {
        PlyFormat::Ascii => std::str::from_utf8(body)
            .map_err(|_| bad("body is not UTF-8"))?
            .split_whitespace()
            .map(|w| w.parse::<f32>().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?,
        PlyFormat::BinaryLittleEndian => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    if coords.len() != count * 3 {
        return Err(bad("vertex count does not match body"));
    }
    Ok(coords
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect())
}

/// Dumps `ᾱ₀..ᾱ_T` as a JSON array.
pub fn write_schedule(path: &Path, sched: &NoiseSchedule) -> Result<()> {
    write_json(path, sched.values())
}

pub fn read_schedule(path: &Path) -> Result<NoiseSchedule> {
    let values: Vec<f64> = read_json(path)?;
    Ok(NoiseSchedule::from_alpha_bar(values)?)
}
