use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3};

use super::{dehomogenize, GeometryError, Mat3, PinholeCamera, Vec3, DEFAULT_W_EPS};

const MIN_PIXELS: usize = 6;
// Ratio of the two smallest singular values to the largest below which the
// homography null space is not unique.
const RANK_TOL: f64 = 1e-10;

/// Geodesic angle of a rotation matrix, in degrees.
pub fn rotation_angle_deg(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Recovers a pinhole camera from a raymap.
///
/// The center is the mean of the valid origins. The rotation and intrinsics
/// come from the homography `H` that maps pixel coordinates onto the world
/// ray directions, `d ∝ H [u, v, 1]ᵀ`. `H` is found linearly from the
/// cross-product constraints `d × H x = 0`, then `H⁻¹ ∝ K R` is split by an
/// RQ decomposition with zero skew imposed on `K`.
///
/// `pixels` holds the pixel coordinates of every cell in row-major order.
pub fn rays_to_camera(
    rm: &super::RayMap,
    pixels: &[(f64, f64)],
) -> Result<PinholeCamera, GeometryError> {
    if pixels.len() != rm.len() {
        return Err(GeometryError::InvalidInput("pixel grid does not match raymap"));
    }

    let mut center = Vec3::zeros();
    let mut n_origins = 0usize;
    for (o, _) in rm.origins.iter().zip(&rm.valid).filter(|(_, v)| **v) {
        if let Ok(p) = dehomogenize(o, DEFAULT_W_EPS) {
            center += p;
            n_origins += 1;
        }
    }
    if n_origins == 0 {
        return Err(GeometryError::InsufficientData {
            found: 0,
            needed: MIN_PIXELS,
        });
    }
    center /= n_origins as f64;

    // Direction from the center towards E = (e, w) is e - w c, which stays
    // well defined for endpoints at infinity. The raw vector is used: the
    // sign of a near-zero w carries no information, while targets always
    // have w >= 0 and point their xyz part away from the camera.
    let mut dirs: Vec<(Vec3, (f64, f64))> = Vec::new();
    for idx in 0..rm.len() {
        if !rm.valid[idx] {
            continue;
        }
        let e = rm.endpoints[idx];
        if !e.is_finite() {
            continue;
        }
        let d = e.xyz() - center * e.w();
        let n = d.norm();
        if n > 1e-12 && n.is_finite() {
            dirs.push((d / n, pixels[idx]));
        }
    }
    if dirs.len() < MIN_PIXELS {
        return Err(GeometryError::InsufficientData {
            found: dirs.len(),
            needed: MIN_PIXELS,
        });
    }

    // Hartley normalization of the pixel coordinates.
    let m = dirs.len() as f64;
    let (mu, mv) = dirs
        .iter()
        .fold((0.0, 0.0), |acc, (_, p)| (acc.0 + p.0, acc.1 + p.1));
    let (mu, mv) = (mu / m, mv / m);
    let spread = dirs
        .iter()
        .map(|(_, p)| ((p.0 - mu).powi(2) + (p.1 - mv).powi(2)).sqrt())
        .sum::<f64>()
        / m;
    let s = if spread > 1e-12 {
        core::f64::consts::SQRT_2 / spread
    } else {
        1.0
    };
    let norm_t = Mat3::new(s, 0.0, -s * mu, 0.0, s, -s * mv, 0.0, 0.0, 1.0);

    let mut a = DMatrix::<f64>::zeros(3 * dirs.len(), 9);
    for (k, (d, p)) in dirs.iter().enumerate() {
        let x = [s * (p.0 - mu), s * (p.1 - mv), 1.0];
        // (H x)_r = sum_c h[3r + c] x_c; rows are the components of d × H x.
        for c in 0..3 {
            // row 0: d_y (Hx)_z - d_z (Hx)_y
            a[(3 * k, 6 + c)] = d.y * x[c];
            a[(3 * k, 3 + c)] = -d.z * x[c];
            // row 1: d_z (Hx)_x - d_x (Hx)_z
            a[(3 * k + 1, c)] = d.z * x[c];
            a[(3 * k + 1, 6 + c)] = -d.x * x[c];
            // row 2: d_x (Hx)_y - d_y (Hx)_x
            a[(3 * k + 2, 3 + c)] = d.x * x[c];
            a[(3 * k + 2, c)] = -d.y * x[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or(GeometryError::DegenerateRays("svd failed"))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let largest = sv[order[sv.len() - 1]];
    if !(largest > 0.0) || sv[order[1]] <= RANK_TOL * largest {
        return Err(GeometryError::DegenerateRays("constraint matrix is rank deficient"));
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let mut hom = h_norm * norm_t;

    let forward: f64 = dirs
        .iter()
        .map(|(d, p)| {
            let r = hom * Vec3::new(p.0, p.1, 1.0);
            d.dot(&r) / r.norm().max(1e-300)
        })
        .sum();
    if forward < 0.0 {
        hom = -hom;
    }

    let kr = hom
        .try_inverse()
        .ok_or(GeometryError::DegenerateRays("homography is singular"))?;
    let (k, r) = rq3(&kr)?;
    if r.determinant() < 0.0 {
        return Err(GeometryError::DegenerateRays("recovered rotation is a reflection"));
    }
    let k = k / k[(2, 2)];
    let cam = PinholeCamera {
        fx: k[(0, 0)],
        fy: k[(1, 1)],
        cx: k[(0, 2)],
        cy: k[(1, 2)],
        translation: -(r * center),
        rotation: r,
    };
    cam.validate()?;
    Ok(cam)
}

/// `M = K R` with `K` upper triangular with positive diagonal and `R`
/// orthonormal, by Gram-Schmidt on the rows of `M` from the bottom up.
fn rq3(m: &Mat3) -> Result<(Mat3, Mat3), GeometryError> {
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let k22 = rows[2].norm();
    if k22 < 1e-300 {
        return Err(GeometryError::DegenerateRays("rank deficient homography"));
    }
    let r2 = rows[2] / k22;
    let k12 = rows[1].dot(&r2);
    let rem1 = rows[1] - r2 * k12;
    let k11 = rem1.norm();
    if k11 < 1e-300 {
        return Err(GeometryError::DegenerateRays("rank deficient homography"));
    }
    let r1 = rem1 / k11;
    let k02 = rows[0].dot(&r2);
    let k01 = rows[0].dot(&r1);
    let rem0 = rows[0] - r2 * k02 - r1 * k01;
    let k00 = rem0.norm();
    if k00 < 1e-300 {
        return Err(GeometryError::DegenerateRays("rank deficient homography"));
    }
    let r0 = rem0 / k00;
    // Zero skew: drop k01 and keep the rest.
    let k = Mat3::new(k00, 0.0, k02, 0.0, k11, k12, 0.0, 0.0, k22);
    let r = Mat3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()]);
    Ok((k, r))
}
