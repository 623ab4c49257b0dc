use alloc::vec::Vec;

use super::{DepthMap, GeometryError, Mat3, PinholeCamera, Vec3};

/// `x -> R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }
}

/// Output of [`normalize_scene`]. New world coordinates are
/// `scale * frame.apply(old)`.
#[derive(Debug, Clone)]
pub struct NormalizedScene {
    pub cameras: Vec<PinholeCamera>,
    pub depths: Vec<DepthMap>,
    pub scale: f64,
    pub frame: RigidTransform,
}

impl NormalizedScene {
    pub fn to_normalized(&self, p: &Vec3) -> Vec3 {
        self.frame.apply(p) * self.scale
    }

    pub fn to_original(&self, p: &Vec3) -> Vec3 {
        self.frame.inverse().apply(&(p / self.scale))
    }
}

/// Re-expresses the scene in the first camera's frame and rescales it so the
/// (lower) median distance of the first view's unprojected valid depths from
/// the origin is one.
pub fn normalize_scene(
    cams: &[PinholeCamera],
    dms: &[DepthMap],
) -> Result<NormalizedScene, GeometryError> {
    if cams.is_empty() || cams.len() != dms.len() {
        return Err(GeometryError::InvalidInput("need one depth map per camera"));
    }
    let first = &cams[0];
    let first_dm = &dms[0];
    let mut dists: Vec<f64> = first_dm
        .pixel_centers()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| first_dm.valid[*i])
        .map(|(i, (u, v))| first.pixel_ray(u, v).norm() * first_dm.depth[i])
        .collect();
    if dists.is_empty() {
        return Err(GeometryError::DegenerateScene("first view has no valid depth"));
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let median = dists[(dists.len() - 1) / 2];
    if !(median > 0.0) || !median.is_finite() {
        return Err(GeometryError::DegenerateScene("median point distance is zero"));
    }
    let scale = 1.0 / median;
    let frame = RigidTransform {
        rotation: first.rotation,
        translation: first.translation,
    };

    let r1t = first.rotation.transpose();
    let cameras = cams
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (rotation, translation) = if i == 0 {
                (Mat3::identity(), Vec3::zeros())
            } else {
                let r = c.rotation * r1t;
                (r, (c.translation - r * first.translation) * scale)
            };
            PinholeCamera {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                rotation,
                translation,
            }
        })
        .collect();
    let depths = dms
        .iter()
        .map(|dm| DepthMap {
            depth: dm.depth.iter().map(|d| d * scale).collect(),
            ..dm.clone()
        })
        .collect();
    Ok(NormalizedScene {
        cameras,
        depths,
        scale,
        frame,
    })
}
