use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cast_ray, Scene, SynthError};
use crate::geometry::{look_at, DepthMap, PinholeCamera, Vec3};

/// Color of pixels that hit nothing.
pub const BACKGROUND: [f64; 3] = [0.05, 0.05, 0.1];

/// Lambert shading from an overhead light plus a light at the camera.
///
/// Both lights are unchanged by rotations about the vertical axis, so such
/// rotations of scene and camera together leave images unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lighting {
    pub ambient: f64,
    pub overhead: f64,
    pub headlight: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            ambient: 0.2,
            overhead: 0.5,
            headlight: 0.4,
        }
    }
}

/// Image and z-depth sampled at the cell centers of a `rows x cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    /// Row-major RGB, `rows * cols * 3`.
    pub image: Vec<f64>,
    /// Hit cells are valid.
    pub depth: DepthMap,
}

/// Casts one ray per cell center through `cam`.
pub fn render_view(
    scene: &Scene,
    cam: &PinholeCamera,
    rows: usize,
    cols: usize,
    stride: f64,
    light: &Lighting,
) -> Result<RenderedView, SynthError> {
    cam.validate()?;
    let origin = cam.center();
    if scene.contains(&origin) {
        return Err(SynthError::InvalidPose("camera inside a primitive"));
    }
    let rt = cam.rotation.transpose();
    let mut image = Vec::with_capacity(rows * cols * 3);
    let mut depth = vec![0.0; rows * cols];
    let mut valid = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (u, v) = ((j as f64 + 0.5) * stride, (i as f64 + 0.5) * stride);
            // Unit camera-z component, so the hit parameter is the z-depth.
            let dir = rt * cam.pixel_ray(u, v);
            match cast_ray(scene, &origin, &dir) {
                Some(hit) => {
                    let view = -dir.normalize();
                    let shade = light.ambient
                        + light.overhead * hit.normal.dot(&Vec3::z()).max(0.0)
                        + light.headlight * hit.normal.dot(&view).max(0.0);
                    let alb = scene.primitives[hit.primitive].albedo;
                    image.extend(alb.iter().map(|a| (a * shade).clamp(0.0, 1.0)));
                    depth[i * cols + j] = hit.t;
                    valid[i * cols + j] = true;
                }
                None => image.extend_from_slice(&BACKGROUND),
            }
        }
    }
    Ok(RenderedView {
        image,
        depth: DepthMap::new(rows, cols, stride, depth, valid)?,
    })
}

/// Placement of cameras around the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingOptions {
    /// Azimuth between the first and last camera; drawn per call from
    /// `[60°, 360°·(n−1)/n]` when `None`.
    pub spread_deg: Option<f64>,
    /// Walk the ring clockwise or counterclockwise with equal odds instead
    /// of always counterclockwise.
    pub mirror: bool,
    /// Uniform azimuth noise per camera, in degrees.
    pub jitter_deg: f64,
    /// Elevation above the horizontal plane, in degrees.
    pub elevation_deg: (f64, f64),
    /// Distance from the centroid, in bounding radii.
    pub distance: (f64, f64),
    /// Focal length in image widths.
    pub focal: (f64, f64),
    pub image_size: usize,
}

impl Default for RingOptions {
    fn default() -> Self {
        RingOptions {
            spread_deg: None,
            mirror: false,
            jitter_deg: 5.0,
            elevation_deg: (10.0, 40.0),
            distance: (1.7, 2.3),
            focal: (0.875, 1.125),
            image_size: 32,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 < range.1 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// `n` cameras on a jittered ring around the bounding sphere, each looking
/// at its center. Elevation, distance and focal length are shared by the
/// ring; only the azimuth differs.
pub fn sample_camera_ring(scene: &Scene, n: usize, seed: u64, opts: &RingOptions) -> Result<Vec<PinholeCamera>, SynthError> {
    if !(2..=8).contains(&n) {
        return Err(SynthError::InvalidInput("ring needs 2 to 8 cameras"));
    }
    if opts.distance.0 * opts.focal.0.min(opts.focal.1) < 0.0 || opts.image_size == 0 {
        return Err(SynthError::InvalidInput("ring distance, focal and image size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_spread = 360.0 * (n - 1) as f64 / n as f64;
    let mut spread = match opts.spread_deg {
        Some(s) => s,
        None => rng.random_range(60.0f64.min(max_spread)..=max_spread),
    };
    if opts.mirror && rng.random_bool(0.5) {
        spread = -spread;
    }
    let a0 = rng.random_range(0.0..360.0);
    let elev = draw(&mut rng, opts.elevation_deg).to_radians();
    let dist = draw(&mut rng, opts.distance) * scene.bounds_radius.max(1e-3);
    let f = draw(&mut rng, opts.focal) * opts.image_size as f64;
    let c = opts.image_size as f64 / 2.0;
    let target = scene.bounds_center;
    (0..n)
        .map(|k| {
            let jitter = if opts.jitter_deg > 0.0 {
                rng.random_range(-opts.jitter_deg..=opts.jitter_deg)
            } else {
                0.0
            };
            let az = (a0 + spread * k as f64 / (n - 1) as f64 + jitter).to_radians();
            let eye = target + Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()) * dist;
            look_at(&eye, &target, &Vec3::z(), f, f, c, c).map_err(SynthError::from)
        })
        .collect()
}

/// Extra invalidation applied to a depth map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    /// Fraction of the valid cells to invalidate, in `[0, 1)`.
    pub rate: f64,
    /// Radius range, in cells, of one random disc of invalid cells.
    pub blob: Option<(f64, f64)>,
}

impl Dropout {
    pub const NONE: Dropout = Dropout { rate: 0.0, blob: None };
}

/// Invalidates `round(rate · valid)` valid cells chosen without replacement,
/// then a random disc. The valid set only shrinks.
pub fn apply_mask_dropout(dm: &DepthMap, drop: &Dropout, seed: u64) -> Result<DepthMap, SynthError> {
    if !(0.0..1.0).contains(&drop.rate) {
        return Err(SynthError::InvalidInput("dropout rate must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dm.clone();
    let valid: Vec<usize> = (0..dm.len()).filter(|&k| dm.valid[k]).collect();
    let count = (drop.rate * valid.len() as f64).round() as usize;
    for k in index::sample(&mut rng, valid.len(), count) {
        out.valid[valid[k]] = false;
    }
    if let Some(radius) = drop.blob {
        let ci = rng.random_range(0..dm.rows) as f64;
        let cj = rng.random_range(0..dm.cols) as f64;
        let r = draw(&mut rng, radius);
        for i in 0..dm.rows {
            for j in 0..dm.cols {
                if (i as f64 - ci).hypot(j as f64 - cj) <= r {
                    out.valid[i * dm.cols + j] = false;
                }
            }
        }
    }
    for k in 0..out.len() {
        if !out.valid[k] {
            out.depth[k] = 0.0;
        }
    }
    Ok(out)
}
