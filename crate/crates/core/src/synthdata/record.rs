use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    apply_mask_dropout, generate_scene_with, render_view, sample_camera_ring, Dropout, Lighting, RingOptions,
    SceneOptions, SynthError,
};
use crate::denoiser::{ModelConfig, TrainingSample};
use crate::geometry::{build_raymap_with_background, normalize_scene, DepthMap, HomogeneousPoint, PinholeCamera, RayMap};
use crate::Real;

/// Train/held-out assignment, by seed parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

impl Split {
    pub fn of_seed(seed: u64) -> Split {
        if seed % 2 == 0 {
            Split::Train
        } else {
            Split::HeldOut
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub image_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Inclusive range of the number of views.
    pub views: (usize, usize),
    pub scene: SceneOptions,
    pub ring: RingOptions,
    pub dropout: Dropout,
    pub lighting: Lighting,
    /// Views with fewer valid grid cells than this fraction are rejected.
    pub min_valid_fraction: f64,
    pub max_attempts: u32,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            image_size: 32,
            grid_rows: 16,
            grid_cols: 16,
            views: (2, 4),
            scene: SceneOptions::default(),
            ring: RingOptions::default(),
            dropout: Dropout {
                rate: 0.1,
                blob: Some((1.0, 3.0)),
            },
            lighting: Lighting::default(),
            min_valid_fraction: 0.1,
            max_attempts: 32,
        }
    }
}

impl GenOptions {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.grid_rows == 0
            || self.grid_cols == 0
            || self.image_size % self.grid_rows != 0
            || self.image_size % self.grid_cols != 0
            || self.image_size / self.grid_rows != self.image_size / self.grid_cols
        {
            return Err(SynthError::InvalidInput("grid must split the image into square cells"));
        }
        if self.views.0 < 2 || self.views.1 > 8 || self.views.0 > self.views.1 {
            return Err(SynthError::InvalidInput("views must lie in 2..=8"));
        }
        if self.ring.image_size != self.image_size {
            return Err(SynthError::InvalidInput("ring image size differs from image size"));
        }
        Ok(())
    }

    pub fn stride(&self) -> f64 {
        (self.image_size / self.grid_rows) as f64
    }
}

/// One normalized multi-view scene. Depths, rays and images hold values
/// exactly representable as `f32`, so the record survives a float32
/// round trip unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub scene_id: u64,
    pub seed: u64,
    pub image_size: usize,
    /// Row-major RGB per view, `image_size² * 3` each.
    pub images: Vec<Vec<f32>>,
    pub cameras: Vec<PinholeCamera>,
    /// Grid-resolution depth; validity is the training mask.
    pub depths: Vec<DepthMap>,
    /// Background cells carry rays to infinity and are valid; only cells
    /// whose depth was dropped are invalid.
    pub rays: Vec<RayMap>,
    /// Grid cells that hit a primitive, before dropout.
    pub foreground: Vec<Vec<bool>>,
    /// Factor that took the generated scene to normalized units.
    pub scale: f64,
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn quantize_raymap(mut rm: RayMap) -> RayMap {
    for hp in rm.origins.iter_mut().chain(rm.endpoints.iter_mut()) {
        *hp = HomogeneousPoint(hp.0.map(quantize));
    }
    rm
}

impl DatasetRecord {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn split(&self) -> Split {
        Split::of_seed(self.seed)
    }

    /// Training masks: the validity of every raymap cell.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.rays.iter().map(|r| r.valid.clone()).collect()
    }

    /// Shapes agree and every raymap is what `build_raymap` gives for the
    /// stored camera and depth.
    pub fn check(&self) -> Result<(), SynthError> {
        let n = self.views();
        if n < 1
            || self.images.len() != n
            || self.depths.len() != n
            || self.rays.len() != n
            || self.foreground.len() != n
        {
            return Err(SynthError::InvalidInput("per-view lists differ in length"));
        }
        for k in 0..n {
            let (dm, rm) = (&self.depths[k], &self.rays[k]);
            if self.images[k].len() != self.image_size * self.image_size * 3
                || self.foreground[k].len() != dm.len()
                || (rm.rows, rm.cols) != (dm.rows, dm.cols)
            {
                return Err(SynthError::InvalidInput("view shapes are inconsistent"));
            }
            if dm.depth.iter().any(|d| quantize(*d) != *d) {
                return Err(SynthError::InvalidInput("depth is not float32-representable"));
            }
            let background: Vec<bool> = self.foreground[k].iter().map(|f| !f).collect();
            if quantize_raymap(build_raymap_with_background(&self.cameras[k], dm, &background)?) != *rm {
                return Err(SynthError::InvalidInput("raymap does not match camera and depth"));
            }
        }
        Ok(())
    }

    /// Model input for this record; the grid and image size must match.
    pub fn to_training_sample<S: Real>(&self, cfg: &ModelConfig) -> Result<TrainingSample<S>, SynthError> {
        let dm = &self.depths[0];
        if self.image_size != cfg.image_size || dm.rows != cfg.grid_rows || dm.cols != cfg.grid_cols {
            return Err(SynthError::InvalidInput("record does not match the model's grid"));
        }
        let images = self.images.iter().flatten().map(|v| S::from_f64(*v as f64)).collect();
        let rays = self
            .rays
            .iter()
            .flat_map(|rm| rm.to_channels())
            .map(S::from_f64)
            .collect();
        let mask = self.rays.iter().flat_map(|r| r.valid.iter().copied()).collect();
        Ok(TrainingSample {
            views: self.views(),
            images,
            rays,
            mask,
        })
    }
}

/// Generates, renders and normalizes one record; deterministic in `seed`.
/// Draws whose views fall short of the valid-cell minimum are redrawn.
pub fn generate_record(scene_id: u64, seed: u64, opts: &GenOptions) -> Result<DatasetRecord, SynthError> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = opts.grid_rows * opts.grid_cols;
    let min_valid = (opts.min_valid_fraction * cells as f64).ceil() as usize;
    'attempt: for _ in 0..opts.max_attempts {
        let scene = generate_scene_with(rng.random(), &opts.scene);
        let n = rng.random_range(opts.views.0..=opts.views.1);
        let cams = sample_camera_ring(&scene, n, rng.random(), &opts.ring)?;
        let mut images = Vec::with_capacity(n);
        let mut depths = Vec::with_capacity(n);
        let mut foreground = Vec::with_capacity(n);
        for cam in &cams {
            let full = render_view(&scene, cam, opts.image_size, opts.image_size, 1.0, &opts.lighting)?;
            let grid = render_view(&scene, cam, opts.grid_rows, opts.grid_cols, opts.stride(), &opts.lighting)?;
            let dm = apply_mask_dropout(&grid.depth, &opts.dropout, rng.random())?;
            if dm.valid_count() < min_valid.max(1) {
                continue 'attempt;
            }
            images.push(full.image.iter().map(|v| *v as f32).collect());
            foreground.push(grid.depth.valid.clone());
            depths.push(dm);
        }
        let norm = normalize_scene(&cams, &depths)?;
        let depths: Vec<DepthMap> = norm
            .depths
            .into_iter()
            .map(|mut d| {
                d.depth.iter_mut().for_each(|v| *v = quantize(*v));
                d
            })
            .collect();
        let rays = norm
            .cameras
            .iter()
            .zip(&depths)
            .zip(&foreground)
            .map(|((c, d), fg)| {
                let background: Vec<bool> = fg.iter().map(|f| !f).collect();
                build_raymap_with_background(c, d, &background).map(quantize_raymap)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rec = DatasetRecord {
            scene_id,
            seed,
            image_size: opts.image_size,
            images,
            cameras: norm.cameras,
            depths,
            rays,
            foreground,
            scale: norm.scale,
        };
        rec.check()?;
        return Ok(rec);
    }
    Err(SynthError::Rejected(opts.max_attempts))
}
