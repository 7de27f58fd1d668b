//! Parametric surface samplers for the synthetic benchmark classes.
//!
//! Each sampler draws per-sample shape parameters from the RNG for
//! intra-class variety, then samples the surface approximately uniformly by
//! area. Outputs are raw (un-normalized) coordinates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Cone,
    Pyramid,
    Capsule,
    Ellipsoid,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
        ShapeClass::Cone,
        ShapeClass::Pyramid,
        ShapeClass::Capsule,
        ShapeClass::Ellipsoid,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
            ShapeClass::Cone => "cone",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Capsule => "capsule",
            ShapeClass::Ellipsoid => "ellipsoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.label() == s)
    }

    pub fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        match self {
            ShapeClass::Sphere => sample_sphere(n, rng),
            ShapeClass::Cube => sample_cube(n, rng),
            ShapeClass::Cylinder => sample_cylinder(n, rng),
            ShapeClass::Torus => sample_torus(n, rng),
            ShapeClass::Cone => sample_cone(n, rng),
            ShapeClass::Pyramid => sample_pyramid(n, rng),
            ShapeClass::Capsule => sample_capsule(n, rng),
            ShapeClass::Ellipsoid => sample_ellipsoid(n, rng),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn sample_sphere(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n).map(|_| unit_dir(rng)).collect()
}

fn sample_cube(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let half = rng.gen_range(0.8..1.0);
    (0..n)
        .map(|_| {
            let face = rng.gen_range(0..6usize);
            let u = rng.gen_range(-half..half);
            let v = rng.gen_range(-half..half);
            match face {
                0 => [half, u, v],
                1 => [-half, u, v],
                2 => [u, half, v],
                3 => [u, -half, v],
                4 => [u, v, half],
                _ => [u, v, -half],
            }
        })
        .collect()
}

fn sample_cylinder(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let r = rng.gen_range(0.5..0.8);
    let h = rng.gen_range(1.2..1.8);
    let lateral = std::f64::consts::TAU * r * h;
    let caps = 2.0 * std::f64::consts::PI * r * r;
    (0..n)
        .map(|_| {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            if rng.gen_range(0.0..lateral + caps) < lateral {
                let z = rng.gen_range(-h / 2.0..h / 2.0);
                [r * a.cos(), r * a.sin(), z]
            } else {
                let rr = r * rng.gen_range(0.0..1.0f64).sqrt();
                let z = if rng.gen_range(0.0..1.0) < 0.5 { h / 2.0 } else { -h / 2.0 };
                [rr * a.cos(), rr * a.sin(), z]
            }
        })
        .collect()
}

fn sample_torus(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let major = rng.gen_range(0.7..0.9);
    let minor = rng.gen_range(0.2..0.35);
    (0..n)
        .map(|_| {
            let u = rng.gen_range(0.0..std::f64::consts::TAU);
            // rejection in v keeps area density uniform over the tube
            let v = loop {
                let v = rng.gen_range(0.0..std::f64::consts::TAU);
                let accept = (major + minor * v.cos()) / (major + minor);
                if rng.gen_range(0.0..1.0) < accept {
                    break v;
                }
            };
            let ring = major + minor * v.cos();
            [ring * u.cos(), ring * u.sin(), minor * v.sin()]
        })
        .collect()
}

fn sample_cone(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let r: f64 = rng.gen_range(0.6..0.9);
    let h: f64 = rng.gen_range(1.0..1.6);
    let slant = (r * r + h * h).sqrt();
    let lateral = std::f64::consts::PI * r * slant;
    let base = std::f64::consts::PI * r * r;
    (0..n)
        .map(|_| {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            if rng.gen_range(0.0..lateral + base) < lateral {
                // distance fraction from apex, area element grows linearly
                let t = rng.gen_range(0.0..1.0f64).sqrt();
                [t * r * a.cos(), t * r * a.sin(), h / 2.0 - t * h]
            } else {
                let rr = r * rng.gen_range(0.0..1.0f64).sqrt();
                [rr * a.cos(), rr * a.sin(), -h / 2.0]
            }
        })
        .collect()
}

fn sample_triangle(a: [f64; 3], b: [f64; 3], c: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let (mut u, mut v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    let mut p = [0.0; 3];
    for d in 0..3 {
        p[d] = a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]);
    }
    p
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cross = [
        ab[1] * ac[2] - ab[2] * ac[1],
        ab[2] * ac[0] - ab[0] * ac[2],
        ab[0] * ac[1] - ab[1] * ac[0],
    ];
    0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
}

fn sample_pyramid(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let s = rng.gen_range(0.9..1.3); // half base side
    let h = rng.gen_range(1.0..1.5);
    let apex = [0.0, 0.0, h / 2.0];
    let z0 = -h / 2.0;
    let corners = [
        [s, s, z0],
        [-s, s, z0],
        [-s, -s, z0],
        [s, -s, z0],
    ];
    let mut faces: Vec<([f64; 3], [f64; 3], [f64; 3])> = Vec::new();
    for i in 0..4 {
        faces.push((corners[i], corners[(i + 1) % 4], apex));
    }
    // base as two triangles
    faces.push((corners[0], corners[1], corners[2]));
    faces.push((corners[0], corners[2], corners[3]));
    let areas: Vec<f64> = faces.iter().map(|f| triangle_area(f.0, f.1, f.2)).collect();
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = 0;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    idx = i;
                    break;
                }
                pick -= a;
                idx = i;
            }
            let f = faces[idx];
            sample_triangle(f.0, f.1, f.2, rng)
        })
        .collect()
}

fn sample_capsule(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let r = rng.gen_range(0.35..0.5);
    let half = rng.gen_range(0.5..0.8);
    let lateral = std::f64::consts::TAU * r * 2.0 * half;
    let caps = 4.0 * std::f64::consts::PI * r * r;
    (0..n)
        .map(|_| {
            if rng.gen_range(0.0..lateral + caps) < lateral {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = rng.gen_range(-half..half);
                [r * a.cos(), r * a.sin(), z]
            } else {
                let d = unit_dir(rng);
                let offset = if d[2] >= 0.0 { half } else { -half };
                [r * d[0], r * d[1], r * d[2] + offset]
            }
        })
        .collect()
}

fn sample_ellipsoid(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let a = rng.gen_range(0.8..1.0);
    let b = rng.gen_range(0.5..0.7);
    let c = rng.gen_range(0.3..0.45);
    (0..n)
        .map(|_| {
            let d = unit_dir(rng);
            [a * d[0], b * d[1], c * d[2]]
        })
        .collect()
}
