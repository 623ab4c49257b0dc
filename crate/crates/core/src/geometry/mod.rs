//! Projective and Euclidean geometry: homogeneous coordinates, pinhole
//! unprojection, raymaps, scene normalization and ray-to-camera recovery.

mod camera;
mod homogeneous;
mod normalize;
mod raymap;
mod recover;

pub use camera::{camera_center, look_at, unproject_endpoint, PinholeCamera};
pub use homogeneous::{dehomogenize, homogenize, HomogeneousPoint, DEFAULT_W_EPS};
pub use normalize::{normalize_scene, NormalizedScene, RigidTransform};
pub use raymap::{build_raymap, build_raymap_with_background, cell_centers, DepthMap, RayMap};
pub use recover::{rays_to_camera, rotation_angle_deg};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("point at infinity (|w| = {0:e})")]
    AtInfinity(f64),
    #[error("degenerate scene: {0}")]
    DegenerateScene(&'static str),
    #[error("degenerate rays: {0}")]
    DegenerateRays(&'static str),
    #[error("insufficient data: {found} usable pixels, need at least {needed}")]
    InsufficientData { found: usize, needed: usize },
}
