//! Deterministic eight-class shape family used for desk-scale training.
//!
//! Shapes that are symmetric under `p -> -p` are sampled in antithetic
//! pairs, so their centroid is exactly the origin and normalization does
//! not move points off the analytic surface.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    TwoSpheres,
    Helix,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Plane,
        ShapeClass::TwoSpheres,
        ShapeClass::Helix,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or_else(|| {
            Error::Config(format!("unknown shape class {id}; built-in classes are 0..8"))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Plane => "plane",
            ShapeClass::TwoSpheres => "two_spheres",
            ShapeClass::Helix => "helix",
        }
    }

    fn centrally_symmetric(self) -> bool {
        !matches!(self, ShapeClass::Cone | ShapeClass::Helix)
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            ShapeClass::Sphere => unit_vector(rng),
            ShapeClass::Cube => {
                let face = rng.random_range(0..6);
                let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            ShapeClass::Cylinder => {
                const RADIUS: f64 = 0.6;
                let side = 2.0 * PI * RADIUS * 2.0;
                let caps = 2.0 * PI * RADIUS * RADIUS;
                if rng.random::<f64>() * (side + caps) < side {
                    let a = rng.random_range(0.0..TAU);
                    [RADIUS * a.cos(), RADIUS * a.sin(), rng.random_range(-1.0..1.0)]
                } else {
                    let (r, a) = disk(rng, RADIUS);
                    let z = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    [r * a.cos(), r * a.sin(), z]
                }
            }
            ShapeClass::Cone => {
                // Apex at z = 1, base radius 1 at z = -1.
                let side = PI * 5f64.sqrt();
                let base = PI;
                if rng.random::<f64>() * (side + base) < side {
                    let t = rng.random::<f64>().sqrt();
                    let a = rng.random_range(0.0..TAU);
                    [t * a.cos(), t * a.sin(), 1.0 - 2.0 * t]
                } else {
                    let (r, a) = disk(rng, 1.0);
                    [r * a.cos(), r * a.sin(), -1.0]
                }
            }
            ShapeClass::Torus => {
                const RING: f64 = 0.8;
                const TUBE: f64 = 0.3;
                let theta = rng.random_range(0.0..TAU);
                // Rejection keeps the density uniform in surface area.
                let phi = loop {
                    let phi = rng.random_range(0.0..TAU);
                    if rng.random::<f64>() * (RING + TUBE) <= RING + TUBE * phi.cos() {
                        break phi;
                    }
                };
                let w = RING + TUBE * phi.cos();
                [w * theta.cos(), w * theta.sin(), TUBE * phi.sin()]
            }
            ShapeClass::Plane => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
            ShapeClass::TwoSpheres => {
                let d = unit_vector(rng);
                let cx = if rng.random::<bool>() { 0.6 } else { -0.6 };
                [cx + 0.45 * d[0], 0.45 * d[1], 0.45 * d[2]]
            }
            ShapeClass::Helix => {
                let t = rng.random::<f64>();
                let a = 3.0 * TAU * t;
                let d = unit_vector(rng);
                let tube = 0.08;
                [
                    0.6 * a.cos() + tube * d[0],
                    0.6 * a.sin() + tube * d[1],
                    2.0 * t - 1.0 + tube * d[2],
                ]
            }
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

/// Uniform point on a disk of radius `r`, as (radius, angle).
fn disk(rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
    (r * rng.random::<f64>().sqrt(), rng.random_range(0.0..TAU))
}

/// One labeled, unit-sphere normalized cloud of shape `class_id`.
pub fn generate_synthetic(
    class_id: usize,
    n_points: usize,
    seed: u64,
    jitter_sigma: f64,
) -> Result<PointCloud> {
    let class = ShapeClass::from_id(class_id)?;
    if n_points < 8 {
        return Err(Error::Config(format!("n_points must be at least 8, got {n_points}")));
    }
    if !(jitter_sigma >= 0.0 && jitter_sigma.is_finite()) {
        return Err(Error::Config(format!(
            "jitter sigma must be finite and >= 0, got {jitter_sigma}"
        )));
    }
    let mut rng = rng_for(seed, &[class_id as u64, n_points as u64]);
    let mut points = Vec::with_capacity(n_points);
    while points.len() < n_points {
        let p = class.sample(&mut rng);
        points.push(p);
        if class.centrally_symmetric() && points.len() < n_points {
            points.push(p.map(|c| -c));
        }
    }
    if jitter_sigma > 0.0 {
        for p in &mut points {
            for c in p.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += jitter_sigma * z;
            }
        }
    }
    PointCloud::new(points, Some(class_id))?.normalize_unit_sphere()
}
