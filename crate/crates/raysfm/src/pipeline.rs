//! Inference and evaluation over records: sampling raymaps, recovering
//! cameras, exporting clouds and scoring against ground truth.

use std::path::Path;

use raysfm_core::denoiser::DenoiserParams;
use raysfm_core::diffusion::{reverse_sample, NoiseSchedule, SampleOutput, SamplerConfig};
use raysfm_core::eval::{
    center_accuracy_partial, normalized_chamfer, rotation_accuracy_partial, MetricReport,
};
use raysfm_core::geometry::{cell_centers, dehomogenize, rays_to_camera, PinholeCamera, RayMap, Vec3, DEFAULT_W_EPS};
use raysfm_core::synthdata::DatasetRecord;
use serde::{Deserialize, Serialize};

use crate::config::MetricSettings;
use crate::dataset::{record_dir_name, CameraJson};
use crate::error::{Error, Result};
use crate::io::{create_dir, read_json, read_raymap, write_json, write_ply, write_raymap, PlyFormat};

pub const PREDICTIONS_INDEX: &str = "predictions.json";

/// Sampled raymaps of one record for one seed and the cameras read off them.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub rays: Vec<RayMap>,
    /// `None` where recovery failed.
    pub cameras: Vec<Option<PinholeCamera>>,
    pub sample: SampleOutput,
}

/// Pixel coordinates of the grid cells of a raymap, given the cell stride.
pub fn grid_pixels(rm: &RayMap, stride: f64) -> Vec<(f64, f64)> {
    cell_centers(rm.rows, rm.cols, stride)
}

pub fn recover_cameras(rays: &[RayMap], stride: f64) -> Vec<Option<PinholeCamera>> {
    rays.iter()
        .map(|rm| rays_to_camera(rm, &grid_pixels(rm, stride)).ok())
        .collect()
}

/// Finite endpoints of the valid cells, optionally restricted by `select`.
pub fn endpoint_cloud(rays: &[RayMap], select: Option<&[Vec<bool>]>) -> Vec<Vec3> {
    let mut out = Vec::new();
    for (k, rm) in rays.iter().enumerate() {
        for (i, e) in rm.endpoints.iter().enumerate() {
            let keep = rm.valid[i] && select.is_none_or(|s| s[k][i]);
            if keep {
                if let Ok(p) = dehomogenize(e, DEFAULT_W_EPS) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Samples raymaps for `rec` and recovers one camera per view.
pub fn predict(
    params: &DenoiserParams<f32>,
    rec: &DatasetRecord,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
) -> Result<Prediction> {
    let images: Vec<f32> = rec.images.iter().flatten().copied().collect();
    if rec.image_size != params.config.image_size {
        return Err(Error::config(format!(
            "record {} has {}px images, the model expects {}px",
            rec.scene_id, rec.image_size, params.config.image_size
        )));
    }
    let sample = reverse_sample(params, &images, rec.views(), sched, sampler)?;
    let cameras = recover_cameras(&sample.rays, params.config.cell_stride());
    Ok(Prediction {
        rays: sample.rays.clone(),
        cameras,
        sample,
    })
}

/// Scores predicted raymaps against a record.
pub fn evaluate(pred: &[RayMap], rec: &DatasetRecord, m: &MetricSettings) -> Result<MetricReport> {
    if pred.len() != rec.views() {
        return Err(Error::data(format!(
            "record {}: {} predicted views for {} true views",
            rec.scene_id,
            pred.len(),
            rec.views()
        )));
    }
    for (p, d) in pred.iter().zip(&rec.depths) {
        if (p.rows, p.cols) != (d.rows, d.cols) {
            return Err(Error::data(format!("record {}: predicted grid differs from the record's", rec.scene_id)));
        }
    }
    let cams = recover_cameras(pred, rec.depths[0].stride);
    let rots: Vec<_> = cams.iter().map(|c| c.as_ref().map(|c| c.rotation)).collect();
    let centers: Vec<_> = cams.iter().map(|c| c.as_ref().map(|c| c.center())).collect();
    let gt_rots: Vec<_> = rec.cameras.iter().map(|c| c.rotation).collect();
    let gt_centers: Vec<_> = rec.cameras.iter().map(|c| c.center()).collect();
    let gt_cloud = endpoint_cloud(&rec.rays, None);
    let cloud_distance = |pred_cloud: Vec<Vec3>| -> Result<f64> {
        if pred_cloud.is_empty() {
            return Ok(f64::INFINITY);
        }
        Ok(normalized_chamfer(&pred_cloud, &gt_cloud)?)
    };
    Ok(MetricReport {
        rotation_accuracy: rotation_accuracy_partial(&rots, &gt_rots, m.rotation_threshold_deg)?,
        center_accuracy: center_accuracy_partial(&centers, &gt_centers, m.center_threshold)?,
        chamfer: cloud_distance(endpoint_cloud(pred, None))?,
        chamfer_fg: Some(cloud_distance(endpoint_cloud(pred, Some(&rec.foreground)))?),
        rotation_threshold_deg: m.rotation_threshold_deg,
        center_threshold: m.center_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub id: u64,
    pub sampler_seed: u64,
    pub dir: String,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionIndex {
    pub entries: Vec<PredictionEntry>,
}

pub fn prediction_dir_name(id: u64, seed: u64) -> String {
    format!("{}/seed-{seed}", record_dir_name(id))
}

/// Writes one prediction set: `view-<k>.f32` raymaps with sidecars,
/// `cameras.json` and the endpoint cloud as `points.ply`.
pub fn write_prediction(dir: &Path, rays: &[RayMap], cameras: &[Option<PinholeCamera>], ply: PlyFormat) -> Result<()> {
    create_dir(dir)?;
    for (k, rm) in rays.iter().enumerate() {
        write_raymap(&dir.join(format!("view-{k}.f32")), rm)?;
    }
    let cams: Vec<Option<CameraJson>> = cameras.iter().map(|c| c.as_ref().map(CameraJson::from)).collect();
    write_json(&dir.join("cameras.json"), &cams)?;
    write_ply(&dir.join("points.ply"), &endpoint_cloud(rays, None), ply)
}

pub fn read_prediction(dir: &Path, views: usize) -> Result<Vec<RayMap>> {
    (0..views).map(|k| read_raymap(&dir.join(format!("view-{k}.f32")))).collect()
}

pub fn read_prediction_index(root: &Path) -> Result<PredictionIndex> {
    read_json(&root.join(PREDICTIONS_INDEX))
}

/// Writes the ground-truth raymaps of `records` in the prediction layout,
/// as sampler seed 0.
pub fn write_gt_predictions(root: &Path, records: &[DatasetRecord]) -> Result<PredictionIndex> {
    create_dir(root)?;
    let mut index = PredictionIndex::default();
    for r in records {
        let dir = prediction_dir_name(r.scene_id, 0);
        let cams: Vec<_> = r.cameras.iter().cloned().map(Some).collect();
        write_prediction(&root.join(&dir), &r.rays, &cams, PlyFormat::BinaryLittleEndian)?;
        index.entries.push(PredictionEntry {
            id: r.scene_id,
            sampler_seed: 0,
            dir,
            views: r.views(),
        });
    }
    write_json(&root.join(PREDICTIONS_INDEX), &index)?;
    Ok(index)
}
