use alloc::vec::Vec;

use super::{homogenize, unproject_endpoint, GeometryError, HomogeneousPoint, PinholeCamera};

/// Pixel coordinates of the centers of an `rows x cols` grid whose cells are
/// `stride` pixels wide. Pixel `(x, y)` covers `[x, x+1) x [y, y+1)`, so a
/// full-resolution grid (`stride = 1`) samples at `(x + 0.5, y + 0.5)`.
pub fn cell_centers(rows: usize, cols: usize, stride: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(((j as f64 + 0.5) * stride, (i as f64 + 0.5) * stride));
        }
    }
    out
}

/// Z-depth per grid cell with a validity mask. Cells are `stride` pixels
/// wide; depth is sampled at the cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub stride: f64,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(
        rows: usize,
        cols: usize,
        stride: f64,
        depth: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        if depth.len() != rows * cols || valid.len() != rows * cols {
            return Err(GeometryError::InvalidInput("depth map size mismatch"));
        }
        if !(stride > 0.0) {
            return Err(GeometryError::InvalidInput("stride must be positive"));
        }
        if depth
            .iter()
            .zip(&valid)
            .any(|(d, &ok)| ok && !(d.is_finite() && *d >= 0.0))
        {
            return Err(GeometryError::InvalidInput("valid depth must be finite and >= 0"));
        }
        Ok(DepthMap {
            rows,
            cols,
            stride,
            depth,
            valid,
        })
    }

    /// Constant depth over the whole grid.
    pub fn constant(rows: usize, cols: usize, stride: f64, depth: f64) -> Self {
        DepthMap {
            rows,
            cols,
            stride,
            depth: alloc::vec![depth; rows * cols],
            valid: alloc::vec![true; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn pixel_centers(&self) -> Vec<(f64, f64)> {
        cell_centers(self.rows, self.cols, self.stride)
    }
}

/// Per-cell ray origin and endpoint, both homogeneous, plus a validity mask.
/// Invalid cells hold [`HomogeneousPoint::ORIGIN`] in both slots.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap {
    pub rows: usize,
    pub cols: usize,
    pub origins: Vec<HomogeneousPoint>,
    pub endpoints: Vec<HomogeneousPoint>,
    pub valid: Vec<bool>,
}

impl RayMap {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major `rows x cols x 8` values: origin xyzw then endpoint xyzw.
    pub fn to_channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 8);
        for (o, e) in self.origins.iter().zip(&self.endpoints) {
            out.extend_from_slice(&o.0);
            out.extend_from_slice(&e.0);
        }
        out
    }

    /// Inverse of [`RayMap::to_channels`]; every cell is marked valid.
    pub fn from_channels(rows: usize, cols: usize, data: &[f64]) -> Result<Self, GeometryError> {
        if data.len() != rows * cols * 8 {
            return Err(GeometryError::InvalidInput("raymap tensor size mismatch"));
        }
        let mut origins = Vec::with_capacity(rows * cols);
        let mut endpoints = Vec::with_capacity(rows * cols);
        for cell in data.chunks_exact(8) {
            origins.push(HomogeneousPoint([cell[0], cell[1], cell[2], cell[3]]));
            endpoints.push(HomogeneousPoint([cell[4], cell[5], cell[6], cell[7]]));
        }
        Ok(RayMap {
            rows,
            cols,
            origins,
            endpoints,
            valid: alloc::vec![true; rows * cols],
        })
    }
}

/// Origins are the homogenized camera center; endpoints are homogenized
/// unprojections of each valid cell center at its depth.
pub fn build_raymap(cam: &PinholeCamera, dm: &DepthMap) -> Result<RayMap, GeometryError> {
    let origin = homogenize(&cam.center())?;
    let n = dm.len();
    let mut origins = Vec::with_capacity(n);
    let mut endpoints = Vec::with_capacity(n);
    for (idx, pixel) in dm.pixel_centers().into_iter().enumerate() {
        if dm.valid[idx] {
            let p = unproject_endpoint(cam, pixel, dm.depth[idx])?;
            origins.push(origin);
            endpoints.push(homogenize(&p)?);
        } else {
            origins.push(HomogeneousPoint::ORIGIN);
            endpoints.push(HomogeneousPoint::ORIGIN);
        }
    }
    Ok(RayMap {
        rows: dm.rows,
        cols: dm.cols,
        origins,
        endpoints,
        valid: dm.valid.clone(),
    })
}

/// [`build_raymap`], except that invalid cells flagged in `background`
/// become valid rays whose endpoint is the point at infinity along the
/// cell's viewing direction, `(Rᵀ K⁻¹ [u, v, 1]ᵀ, 0)` at unit norm.
pub fn build_raymap_with_background(
    cam: &PinholeCamera,
    dm: &DepthMap,
    background: &[bool],
) -> Result<RayMap, GeometryError> {
    if background.len() != dm.len() {
        return Err(GeometryError::InvalidInput("background mask does not match depth map"));
    }
    let mut rm = build_raymap(cam, dm)?;
    let origin = homogenize(&cam.center())?;
    for (idx, pixel) in dm.pixel_centers().into_iter().enumerate() {
        if background[idx] && !dm.valid[idx] {
            let d = (cam.rotation.transpose() * cam.pixel_ray(pixel.0, pixel.1)).normalize();
            rm.origins[idx] = origin;
            rm.endpoints[idx] = HomogeneousPoint([d.x, d.y, d.z, 0.0]);
            rm.valid[idx] = true;
        }
    }
    Ok(rm)
}
