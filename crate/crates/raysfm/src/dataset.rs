//! On-disk dataset: an `index.json` plus one directory per record holding
//! `meta.json`, `images.f32`, `depth.f32`, `rays.f32` and `mask.u8`.
//!
//! Mask bytes carry validity in bit 0 and foreground in bit 1.

use std::fs;
use std::path::{Path, PathBuf};

use raysfm_core::geometry::{DepthMap, Mat3, PinholeCamera, RayMap, Vec3};
use raysfm_core::synthdata::{generate_record, DatasetRecord, GenOptions, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, create_dir, f32_bytes, read_f32, read_json, temp_sibling, write_f32, write_json};

pub const INDEX_NAME: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    HeldOut,
}

impl From<Split> for SplitName {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitName::Train,
            Split::HeldOut => SplitName::HeldOut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: u64,
    pub seed: u64,
    pub split: SplitName,
    pub dir: String,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub records: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn count(&self, split: SplitName) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn get(&self, id: u64) -> Option<&IndexEntry> {
        self.records.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&PinholeCamera> for CameraJson {
    fn from(c: &PinholeCamera) -> Self {
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| c.rotation[(i, j)])),
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraJson {
    pub fn to_camera(&self) -> Result<PinholeCamera> {
        let r = Mat3::from_fn(|i, j| self.rotation[i][j]);
        let t = Vec3::from(self.translation);
        Ok(PinholeCamera::new(self.fx, self.fy, self.cx, self.cy, r, t)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: u64,
    pub seed: u64,
    pub image_size: usize,
    pub grid: [usize; 2],
    pub stride: f64,
    pub views: usize,
    pub scale: f64,
    pub cameras: Vec<CameraJson>,
}

pub fn record_dir_name(id: u64) -> String {
    format!("rec-{id:06}")
}

/// Writes one record into `dir`, which must exist.
pub fn write_record(dir: &Path, rec: &DatasetRecord) -> Result<()> {
    rec.check().map_err(|e| Error::data(format!("record {}: {e}", rec.scene_id)))?;
    let d0 = &rec.depths[0];
    let meta = RecordMeta {
        id: rec.scene_id,
        seed: rec.seed,
        image_size: rec.image_size,
        grid: [d0.rows, d0.cols],
        stride: d0.stride,
        views: rec.views(),
        scale: rec.scale,
        cameras: rec.cameras.iter().map(CameraJson::from).collect(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_f32(&dir.join("images.f32"), rec.images.iter().flatten().copied())?;
    write_f32(&dir.join("depth.f32"), rec.depths.iter().flat_map(|d| d.depth.iter().map(|v| *v as f32)))?;
    let rays: Vec<f32> = rec.rays.iter().flat_map(|r| r.to_channels()).map(|v| v as f32).collect();
    atomic_write(&dir.join("rays.f32"), &f32_bytes(rays))?;
    let mask: Vec<u8> = rec
        .depths
        .iter()
        .zip(&rec.foreground)
        .flat_map(|(d, fg)| d.valid.iter().zip(fg).map(|(v, f)| u8::from(*v) | (u8::from(*f) << 1)))
        .collect();
    atomic_write(&dir.join("mask.u8"), &mask)
}

/// Reads a record written by [`write_record`] and re-runs its consistency
/// check.
pub fn read_record(dir: &Path) -> Result<DatasetRecord> {
    let meta: RecordMeta = read_json(&dir.join("meta.json"))?;
    let [rows, cols] = meta.grid;
    let (n, cells) = (meta.views, rows * cols);
    if n == 0 || meta.cameras.len() != n {
        return Err(Error::data(format!("{}: camera count differs from views", dir.display())));
    }
    let img_len = meta.image_size * meta.image_size * 3;
    let images = read_f32(&dir.join("images.f32"), n * img_len)?;
    let depth = read_f32(&dir.join("depth.f32"), n * cells)?;
    let rays = read_f32(&dir.join("rays.f32"), n * cells * 8)?;
    let mask_path = dir.join("mask.u8");
    let mask = fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
    if mask.len() != n * cells {
        return Err(Error::data(format!("{}: mask has the wrong length", mask_path.display())));
    }
    let cameras = meta.cameras.iter().map(CameraJson::to_camera).collect::<Result<Vec<_>>>()?;
    let mut depths = Vec::with_capacity(n);
    let mut raymaps = Vec::with_capacity(n);
    let mut foreground = Vec::with_capacity(n);
    for k in 0..n {
        let m = &mask[k * cells..(k + 1) * cells];
        let valid: Vec<bool> = m.iter().map(|b| b & 1 != 0).collect();
        let dk = depth[k * cells..(k + 1) * cells].iter().map(|v| f64::from(*v)).collect();
        depths.push(DepthMap::new(rows, cols, meta.stride, dk, valid)?);
        let ch: Vec<f64> = rays[k * cells * 8..(k + 1) * cells * 8].iter().map(|v| f64::from(*v)).collect();
        let mut rm = RayMap::from_channels(rows, cols, &ch)?;
        // Background rays point to infinity and stay valid.
        rm.valid = m.iter().map(|b| b & 1 != 0 || b & 2 == 0).collect();
        raymaps.push(rm);
        foreground.push(m.iter().map(|b| b & 2 != 0).collect());
    }
    let rec = DatasetRecord {
        scene_id: meta.id,
        seed: meta.seed,
        image_size: meta.image_size,
        images: images.chunks_exact(img_len).map(<[f32]>::to_vec).collect(),
        cameras,
        depths,
        rays: raymaps,
        foreground,
        scale: meta.scale,
    };
    rec.check().map_err(|e| Error::data(format!("{}: {e}", dir.display())))?;
    Ok(rec)
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let index = read_json(&root.join(INDEX_NAME))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn load(&self, entry: &IndexEntry) -> Result<DatasetRecord> {
        let rec = read_record(&self.root.join(&entry.dir))?;
        if rec.scene_id != entry.id || rec.seed != entry.seed {
            return Err(Error::data(format!("record {} does not match its index entry", entry.id)));
        }
        Ok(rec)
    }

    pub fn load_split(&self, split: SplitName) -> Result<Vec<DatasetRecord>> {
        self.index
            .records
            .iter()
            .filter(|e| e.split == split)
            .map(|e| self.load(e))
            .collect()
    }
}

/// Generates records `0..count` (record `k` from seed `seed + k`) into a new
/// directory `out`. The directory is assembled under a temporary name and
/// renamed into place once complete.
pub fn generate_dataset(out: &Path, count: u64, seed: u64, opts: &GenOptions) -> Result<DatasetIndex> {
    if out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        return Err(Error::config(format!("output directory {} is not empty", out.display())));
    }
    opts.validate()?;
    let tmp = temp_sibling(out);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    create_dir(&tmp)?;
    let entries = (0..count)
        .into_par_iter()
        .map(|k| {
            let s = seed.wrapping_add(k);
            let rec = generate_record(k, s, opts)?;
            let name = record_dir_name(k);
            let dir = tmp.join(&name);
            create_dir(&dir)?;
            write_record(&dir, &rec)?;
            Ok(IndexEntry {
                id: k,
                seed: s,
                split: rec.split().into(),
                dir: name,
                views: rec.views(),
            })
        })
        .collect::<Result<Vec<_>>>();
    let entries = match entries {
        Ok(e) => e,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    let index = DatasetIndex { records: entries };
    write_json(&tmp.join(INDEX_NAME), &index)?;
    if out.exists() {
        fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
    }
    fs::rename(&tmp, out).map_err(|e| Error::io(out, e))?;
    Ok(index)
}
