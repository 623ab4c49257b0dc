//! Pose and geometry metrics: relative rotation accuracy, center accuracy
//! after similarity alignment, and Chamfer distance between point clouds.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_angle_deg, Mat3, PinholeCamera, Vec3};

pub const DEFAULT_ROTATION_THRESHOLD_DEG: f64 = 15.0;
pub const DEFAULT_CENTER_THRESHOLD: f64 = 0.1;

/// Angle charged to a pair whose predicted camera could not be recovered.
const FAILED_PAIR_DEG: f64 = 180.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} elements, found {found}")]
    TooFew { found: usize, needed: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
}

/// Cameras of one scene, at least two.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet {
    cameras: Vec<PinholeCamera>,
}

impl PoseSet {
    pub fn new(cameras: Vec<PinholeCamera>) -> Result<Self, EvalError> {
        if cameras.len() < 2 {
            return Err(EvalError::TooFew {
                found: cameras.len(),
                needed: 2,
            });
        }
        Ok(PoseSet { cameras })
    }

    pub fn cameras(&self) -> &[PinholeCamera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn rotations(&self) -> Vec<Mat3> {
        self.cameras.iter().map(|c| c.rotation).collect()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.cameras.iter().map(|c| c.center()).collect()
    }
}

/// Per-scene metrics plus the thresholds they were computed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rotation_accuracy: f64,
    pub center_accuracy: f64,
    pub chamfer: f64,
    pub chamfer_fg: Option<f64>,
    pub rotation_threshold_deg: f64,
    pub center_threshold: f64,
}

impl MetricReport {
    /// Mean of each field over `reports`; `chamfer_fg` averages the reports
    /// that carry it. Thresholds are taken from the first report.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let fg: Vec<f64> = reports.iter().filter_map(|r| r.chamfer_fg).collect();
        Some(MetricReport {
            rotation_accuracy: reports.iter().map(|r| r.rotation_accuracy).sum::<f64>() / n,
            center_accuracy: reports.iter().map(|r| r.center_accuracy).sum::<f64>() / n,
            chamfer: reports.iter().map(|r| r.chamfer).sum::<f64>() / n,
            chamfer_fg: (!fg.is_empty()).then(|| fg.iter().sum::<f64>() / fg.len() as f64),
            rotation_threshold_deg: first.rotation_threshold_deg,
            center_threshold: first.center_threshold,
        })
    }
}

/// Geodesic error of every ordered pair `(i, j)`, `i != j`, between the
/// predicted and true relative rotations `R_j R_iᵀ`. Missing predictions
/// make every pair they take part in cost 180°.
pub fn relative_rotation_errors(pred: &[Option<Mat3>], gt: &[Mat3]) -> Result<Vec<f64>, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    let n = gt.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let err = match (pred[i], pred[j]) {
                (Some(pi), Some(pj)) => {
                    let rel_pred = pj * pi.transpose();
                    let rel_gt = gt[j] * gt[i].transpose();
                    rotation_angle_deg(&(rel_pred * rel_gt.transpose()))
                }
                _ => FAILED_PAIR_DEG,
            };
            out.push(err);
        }
    }
    Ok(out)
}

/// Fraction of ordered pairs with relative rotation error below `thresh_deg`.
pub fn rotation_accuracy(pred: &PoseSet, gt: &PoseSet, thresh_deg: f64) -> Result<f64, EvalError> {
    let pred: Vec<Option<Mat3>> = pred.rotations().into_iter().map(Some).collect();
    rotation_accuracy_partial(&pred, &gt.rotations(), thresh_deg)
}

/// [`rotation_accuracy`] with possibly missing predictions.
pub fn rotation_accuracy_partial(pred: &[Option<Mat3>], gt: &[Mat3], thresh_deg: f64) -> Result<f64, EvalError> {
    if gt.len() < 2 {
        return Err(EvalError::TooFew {
            found: gt.len(),
            needed: 2,
        });
    }
    let errs = relative_rotation_errors(pred, gt)?;
    Ok(errs.iter().filter(|e| **e < thresh_deg).count() as f64 / errs.len() as f64)
}

/// `y ≈ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// `Σ ‖T(x_i) − y_i‖²`.
    pub fn residual(&self, x: &[Vec3], y: &[Vec3]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (self.apply(a) - b).norm_squared()).sum()
    }
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().fold(Vec3::zeros(), |acc, v| acc + v) / p.len() as f64
}

/// Least-squares similarity mapping `x` onto `y`, with the reflection
/// correction so the rotation is proper.
pub fn umeyama_align(x: &[Vec3], y: &[Vec3]) -> Result<Similarity, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(EvalError::TooFew {
            found: x.len(),
            needed: 3,
        });
    }
    let n = x.len() as f64;
    let (mx, my) = (centroid(x), centroid(y));
    let var_x = x.iter().map(|p| (p - mx).norm_squared()).sum::<f64>() / n;
    if !(var_x > 0.0) || !var_x.is_finite() {
        return Err(EvalError::Degenerate("source points coincide"));
    }
    let mut cov = Matrix3::zeros();
    for (a, b) in x.iter().zip(y) {
        cov += (b - my) * (a - mx).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * vt.determinant() < 0.0 {
        d[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * vt;
    let scale = svd.singular_values.dot(&d) / var_x;
    Ok(Similarity {
        scale,
        rotation,
        translation: my - rotation * mx * scale,
    })
}

/// Fraction of cameras whose aligned predicted center is within
/// `thresh · scale` of the true one, with the scene scale the largest
/// distance of a true center from their centroid.
pub fn center_accuracy(pred: &PoseSet, gt: &PoseSet, thresh: f64) -> Result<f64, EvalError> {
    let pred: Vec<Option<Vec3>> = pred.centers().into_iter().map(Some).collect();
    center_accuracy_partial(&pred, &gt.centers(), thresh)
}

/// [`center_accuracy`] with possibly missing predictions, which count as
/// misses and are left out of the alignment.
///
/// Two cameras always align exactly and score 1.0. When fewer than three
/// predictions are available the available ones are matched exactly as
/// well; when they coincide, they are all mapped to the true centroid.
pub fn center_accuracy_partial(pred: &[Option<Vec3>], gt: &[Vec3], thresh: f64) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    let n = gt.len();
    if n < 2 {
        return Err(EvalError::TooFew { found: n, needed: 2 });
    }
    if n == 2 {
        return Ok(1.0);
    }
    let gc = centroid(gt);
    let scale = gt.iter().map(|c| (c - gc).norm()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(EvalError::Degenerate("true centers coincide"));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| pred[i].is_some_and(|p| p.iter().all(|v| v.is_finite()))).collect();
    if idx.len() < 3 {
        return Ok(idx.len() as f64 / n as f64);
    }
    let x: Vec<Vec3> = idx.iter().map(|&i| pred[i].expect("filtered")).collect();
    let y: Vec<Vec3> = idx.iter().map(|&i| gt[i]).collect();
    let sim = match umeyama_align(&x, &y) {
        Ok(s) => s,
        Err(EvalError::Degenerate(_)) => Similarity {
            scale: 0.0,
            rotation: Mat3::identity(),
            translation: centroid(&y),
        },
        Err(e) => return Err(e),
    };
    let hits = x
        .iter()
        .zip(&y)
        .filter(|(a, b)| (sim.apply(a) - *b).norm() < thresh * scale)
        .count();
    Ok(hits as f64 / n as f64)
}

/// Scales the cloud so its mean distance from the origin is 1. The cloud
/// is not recentered.
pub fn normalize_cloud(p: &[Vec3]) -> Result<Vec<Vec3>, EvalError> {
    if p.is_empty() {
        return Err(EvalError::TooFew { found: 0, needed: 1 });
    }
    let mean = p.iter().map(|v| v.norm()).sum::<f64>() / p.len() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(EvalError::Degenerate("all points at the origin"));
    }
    Ok(p.iter().map(|v| v / mean).collect())
}

fn mean_nearest(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// Symmetric mean nearest-neighbour Euclidean distance, by brute force.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::TooFew { found: 0, needed: 1 });
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Chamfer distance between the individually normalized clouds.
pub fn normalized_chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, EvalError> {
    chamfer(&normalize_cloud(a)?, &normalize_cloud(b)?)
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let q: [f64; 4] = core::array::from_fn(|_| rng.sample(StandardNormal));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    *q.to_rotation_matrix().matrix()
}

/// Monte Carlo probability that a uniformly random rotation is within
/// `thresh_deg` of the identity: the rotation accuracy of a predictor that
/// guesses relative rotations at random.
pub fn random_rotation_accuracy(thresh_deg: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..draws)
        .filter(|_| rotation_angle_deg(&random_rotation(&mut rng)) < thresh_deg)
        .count();
    hits as f64 / draws as f64
}

/// Rotation by `deg` degrees about `axis`.
pub fn axis_angle(axis: Vec3, deg: f64) -> Mat3 {
    *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), deg.to_radians()).matrix()
}
