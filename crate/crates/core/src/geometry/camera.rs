
use super::{GeometryError, Mat3, Vec3};

/// Pinhole intrinsics plus world-to-camera extrinsics: `x_cam = R x_world + t`.
///
/// Camera axes follow the usual vision convention: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

const ROTATION_TOL: f64 = 1e-9;

impl PinholeCamera {
    /// Builds a camera, checking `RᵀR = I`, `det R = 1` and positive focals.
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self, GeometryError> {
        let cam = PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidInput("non-finite camera parameter"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidInput("focal lengths must be positive"));
        }
        let gram = self.rotation.transpose() * self.rotation - Mat3::identity();
        if gram.iter().any(|v| v.abs() > ROTATION_TOL)
            || (self.rotation.determinant() - 1.0).abs() > ROTATION_TOL
        {
            return Err(GeometryError::InvalidInput("rotation is not in SO(3)"));
        }
        Ok(())
    }

    /// Identity pose with the given intrinsics.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn intrinsics(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹ [u, v, 1]ᵀ`: camera-frame ray with unit z component.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Projects a world point to pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
        ))
    }
}

/// `-Rᵀ t`.
pub fn camera_center(cam: &PinholeCamera) -> Vec3 {
    cam.center()
}

/// World-frame surface point seen at `pixel` with z-depth `depth`:
/// `Rᵀ (depth · K⁻¹ [u, v, 1]ᵀ − t)`.
pub fn unproject_endpoint(
    cam: &PinholeCamera,
    pixel: (f64, f64),
    depth: f64,
) -> Result<Vec3, GeometryError> {
    if !depth.is_finite() || depth < 0.0 {
        return Err(GeometryError::InvalidInput("depth must be finite and non-negative"));
    }
    if !(pixel.0.is_finite() && pixel.1.is_finite()) {
        return Err(GeometryError::InvalidInput("non-finite pixel"));
    }
    let ray = cam.pixel_ray(pixel.0, pixel.1);
    Ok(cam.rotation.transpose() * (ray * depth - cam.translation))
}

/// Camera at `eye` looking at `target` with world `up` pointing up in the
/// image (the image y axis points down).
pub fn look_at(
    eye: &Vec3,
    target: &Vec3,
    up: &Vec3,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
) -> Result<PinholeCamera, GeometryError> {
    let forward = target - eye;
    let fnorm = forward.norm();
    if fnorm < 1e-12 {
        return Err(GeometryError::InvalidInput("eye coincides with target"));
    }
    let forward = forward / fnorm;
    let right = forward.cross(up);
    let rnorm = right.norm();
    if rnorm < 1e-9 {
        return Err(GeometryError::InvalidInput("viewing direction parallel to up"));
    }
    let right = right / rnorm;
    let down = forward.cross(&right);
    let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * eye);
    PinholeCamera::new(fx, fy, cx, cy, rotation, translation)
}
