//! Procedural scenes of spheres, boxes and discs, rendered with analytic
//! depth into multi-view training records.

mod record;
mod render;
mod scene;

pub use record::{generate_record, DatasetRecord, GenOptions, Split};
pub use render::{
    apply_mask_dropout, render_view, sample_camera_ring, Dropout, Lighting, RenderedView, RingOptions, BACKGROUND,
};
pub use scene::{cast_ray, generate_scene, generate_scene_with, Hit, Primitive, Scene, SceneOptions, Shape};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
    #[error("no acceptable record after {0} attempts")]
    Rejected(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
