
use super::{GeometryError, Vec3};

/// Threshold on `|w|` below which a point is reported at infinity.
pub const DEFAULT_W_EPS: f64 = 1e-6;

/// A point of P³ stored as `(x', y', z', w)`.
///
/// Points built with [`homogenize`] have unit norm and `w > 0`. Raw network
/// predictions may be any 4-vector; use [`HomogeneousPoint::from_raw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousPoint(pub [f64; 4]);

impl HomogeneousPoint {
    /// The origin, also used as the fill value for invalid raymap cells.
    pub const ORIGIN: HomogeneousPoint = HomogeneousPoint([0.0, 0.0, 0.0, 1.0]);

    pub fn from_raw(p: [f64; 4]) -> Self {
        HomogeneousPoint(p)
    }

    pub fn w(&self) -> f64 {
        self.0[3]
    }

    pub fn xyz(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `p` and `-p` are the same projective point; pick the one with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.0[3] < 0.0 {
            HomogeneousPoint(self.0.map(|v| -v))
        } else {
            *self
        }
    }

    /// Rescale to unit norm. Returns `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(HomogeneousPoint(self.0.map(|v| v / n)))
        } else {
            None
        }
    }

    pub fn dehomogenize(&self, w_eps: f64) -> Result<Vec3, GeometryError> {
        dehomogenize(self, w_eps)
    }
}

/// `(x, y, z) -> (x, y, z, 1) / sqrt(x² + y² + z² + 1)`.
pub fn homogenize(p: &Vec3) -> Result<HomogeneousPoint, GeometryError> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidInput("non-finite point"));
    }
    // Scale first so the squared norm cannot overflow for huge inputs.
    let m = p.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let (x, y, z) = (p.x / m, p.y / m, p.z / m);
    let one = 1.0 / m;
    let w = (x * x + y * y + z * z + one * one).sqrt();
    Ok(HomogeneousPoint([x / w, y / w, z / w, one / w]))
}

/// Inverse of [`homogenize`]. Negative `w` is sign-canonicalized first.
pub fn dehomogenize(hp: &HomogeneousPoint, w_eps: f64) -> Result<Vec3, GeometryError> {
    if !hp.is_finite() {
        return Err(GeometryError::InvalidInput("non-finite homogeneous point"));
    }
    let c = hp.canonical();
    let w = c.0[3];
    if w.abs() <= w_eps {
        return Err(GeometryError::AtInfinity(w));
    }
    Ok(Vec3::new(c.0[0] / w, c.0[1] / w, c.0[2] / w))
}
