use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec3;

/// Rays closer than this to a surface start are not considered hits.
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: Vec3, max: Vec3 },
    /// Bounded plane: the points of the plane through `center` with unit
    /// `normal` within `radius` of `center`.
    Disc { center: Vec3, normal: Vec3, radius: f64 },
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. } | Shape::Disc { center, .. } => center,
            Shape::Cuboid { min, max } => (min + max) / 2.0,
        }
    }

    /// Radius of a ball about [`Shape::center`] containing the shape.
    pub fn extent(&self) -> f64 {
        match *self {
            Shape::Sphere { radius, .. } | Shape::Disc { radius, .. } => radius,
            Shape::Cuboid { min, max } => (max - min).norm() / 2.0,
        }
    }

    /// Whether `p` is strictly inside a solid shape. Discs have no inside.
    pub fn contains(&self, p: &Vec3) -> bool {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm() < radius,
            Shape::Cuboid { min, max } => (0..3).all(|k| p[k] > min[k] && p[k] < max[k]),
            Shape::Disc { .. } => false,
        }
    }

    /// Distance-like residual that is zero on the surface.
    pub fn surface_residual(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Shape::Cuboid { min, max } => {
                let c = (min + max) / 2.0;
                let h = (max - min) / 2.0;
                let q = (p - c).abs() - h;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
            Shape::Disc { center, normal, radius } => {
                let d = p - center;
                let h = d.dot(&normal);
                let r = (d - normal * h).norm();
                h.abs() + (r - radius).max(0.0)
            }
        }
    }

    /// Rotation by 180° about the vertical axis through the origin.
    pub fn rotated_half_turn(&self) -> Shape {
        let f = |v: Vec3| Vec3::new(-v.x, -v.y, v.z);
        match *self {
            Shape::Sphere { center, radius } => Shape::Sphere { center: f(center), radius },
            Shape::Cuboid { min, max } => Shape::Cuboid {
                min: Vec3::new(-max.x, -max.y, min.z),
                max: Vec3::new(-min.x, -min.y, max.z),
            },
            Shape::Disc { center, normal, radius } => Shape::Disc {
                center: f(center),
                normal: f(normal),
                radius,
            },
        }
    }

    /// Nearest `t > 0` with `origin + t·dir` on the surface, and the outward
    /// normal there. `dir` need not be unit length.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Stable roots of a t² + 2 b t + c.
                let q = -(b + sq.copysign(b));
                let (t0, t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                let t = if lo > HIT_EPS { lo } else if hi > HIT_EPS { hi } else { return None };
                let p = origin + dir * t;
                Some((t, (p - center) / radius))
            }
            Shape::Cuboid { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis_near = 0;
                let mut axis_far = 0;
                for k in 0..3 {
                    if dir[k] == 0.0 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - origin[k]) / dir[k];
                    let b = (max[k] - origin[k]) / dir[k];
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    if lo > t_near {
                        t_near = lo;
                        axis_near = k;
                    }
                    if hi < t_far {
                        t_far = hi;
                        axis_far = k;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis) = if t_near > HIT_EPS {
                    (t_near, axis_near)
                } else if t_far > HIT_EPS {
                    (t_far, axis_far)
                } else {
                    return None;
                };
                let p = origin + dir * t;
                let mut n = Vec3::zeros();
                n[axis] = if (p[axis] - max[axis]).abs() < (p[axis] - min[axis]).abs() { 1.0 } else { -1.0 };
                Some((t, n))
            }
            Shape::Disc { center, normal, radius } => {
                let denom = dir.dot(&normal);
                if denom == 0.0 {
                    return None;
                }
                let t = (center - origin).dot(&normal) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let p = origin + dir * t;
                if (p - center).norm() > radius {
                    return None;
                }
                Some((t, normal))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// RGB in `[0, 1]`.
    pub albedo: [f64; 3],
}

/// Primitives plus a bounding sphere that contains all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub bounds_center: Vec3,
    pub bounds_radius: f64,
}

impl Scene {
    /// Bounding sphere centered at the mean primitive center.
    pub fn new(primitives: Vec<Primitive>) -> Self {
        let n = primitives.len().max(1) as f64;
        let c = primitives.iter().fold(Vec3::zeros(), |a, p| a + p.shape.center()) / n;
        let r = primitives
            .iter()
            .map(|p| (p.shape.center() - c).norm() + p.shape.extent())
            .fold(0.0, f64::max);
        Scene {
            primitives,
            bounds_center: c,
            bounds_radius: r,
        }
    }

    /// Whether some solid primitive strictly contains `p`.
    pub fn contains(&self, p: &Vec3) -> bool {
        self.primitives.iter().any(|q| q.shape.contains(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; the z-depth when `dir` has unit camera-z component.
    pub t: f64,
    pub primitive: usize,
    /// Unit normal facing the ray origin.
    pub normal: Vec3,
}

/// Nearest intersection of `origin + t·dir`, `t > 0`, with the scene.
pub fn cast_ray(scene: &Scene, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, p) in scene.primitives.iter().enumerate() {
        if let Some((t, n)) = p.shape.intersect(origin, dir) {
            if best.is_none_or(|b| t < b.t) {
                let normal = if n.dot(dir) > 0.0 { -n } else { n };
                best = Some(Hit { t, primitive: i, normal });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SceneOptions {
    /// Build the scene from pairs related by a half turn about the vertical
    /// axis through the origin, so it looks the same from opposite sides.
    /// The half turn is its only symmetry.
    pub symmetric: bool,
}

fn random_albedo(rng: &mut ChaCha8Rng) -> [f64; 3] {
    core::array::from_fn(|_| rng.random_range(0.2..1.0))
}

fn random_solid(rng: &mut ChaCha8Rng, spread: f64) -> Shape {
    let c = Vec3::new(
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        rng.random_range(0.1..0.7),
    );
    if rng.random_bool(0.5) {
        Shape::Sphere {
            center: c,
            radius: rng.random_range(0.15..0.45),
        }
    } else {
        let h = Vec3::new(
            rng.random_range(0.1..0.4),
            rng.random_range(0.1..0.4),
            rng.random_range(0.1..0.4),
        );
        Shape::Cuboid { min: c - h, max: c + h }
    }
}

/// A slightly tilted ground disc below the origin.
fn ground(rng: &mut ChaCha8Rng) -> Shape {
    let normal = Vec3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), 1.0).normalize();
    Shape::Disc {
        center: Vec3::new(0.0, 0.0, rng.random_range(-0.3..-0.05)),
        normal,
        radius: rng.random_range(0.9..1.5),
    }
}

pub fn generate_scene(seed: u64) -> Scene {
    generate_scene_with(seed, &SceneOptions::default())
}

/// 3 to 8 primitives inside a region of roughly unit size; deterministic in
/// `seed`.
pub fn generate_scene_with(seed: u64, opts: &SceneOptions) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::new();
    if opts.symmetric {
        let pairs = rng.random_range(2..=3);
        for _ in 0..pairs {
            // Keep each shape off the axis so it differs from its image.
            let mut shape = random_solid(&mut rng, 1.0);
            while shape.center().xy().norm() < shape.extent() + 0.1 {
                shape = random_solid(&mut rng, 1.0);
            }
            let albedo = random_albedo(&mut rng);
            prims.push(Primitive { shape, albedo });
            prims.push(Primitive {
                shape: shape.rotated_half_turn(),
                albedo,
            });
        }
        // No ground disc: it would add a continuous rotational symmetry.
    } else {
        let n = rng.random_range(3..=8);
        let with_ground = rng.random_bool(0.3);
        for k in 0..n {
            let shape = if with_ground && k == 0 {
                ground(&mut rng)
            } else {
                random_solid(&mut rng, 0.6)
            };
            let albedo = random_albedo(&mut rng);
            prims.push(Primitive { shape, albedo });
        }
    }
    Scene::new(prims)
}
