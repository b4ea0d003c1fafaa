use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};
use crate::seeding;

/// Standard deviation of the per-coordinate Gaussian jitter.
pub const JITTER: f64 = 0.01;

/// The synthetic shape families. Every surface fits inside the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Plane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Plane => "plane",
        }
    }

    /// Position in [`ShapeClass::ALL`].
    pub fn index(self) -> usize {
        ShapeClass::ALL.iter().position(|&c| c == self).expect("listed")
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> Point {
        match self {
            ShapeClass::Sphere => unit_vector(rng),
            ShapeClass::Cube => {
                // half side 1/√3 puts the corners on the unit sphere
                let a = 1.0 / 3f64.sqrt();
                let face = rng.random_range(0..6);
                let (u, v) = (rng.random_range(-a..a), rng.random_range(-a..a));
                let s = if face % 2 == 0 { a } else { -a };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            ShapeClass::Cylinder => {
                let (r, h) = (0.6, 0.8);
                let side = 2.0 * PI * r * 2.0 * h;
                let cap = PI * r * r;
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                let t = rng.random_range(0.0..2.0 * PI);
                if pick < side {
                    [r * t.cos(), r * t.sin(), rng.random_range(-h..h)]
                } else {
                    let rho = r * rng.random::<f64>().sqrt();
                    let z = if pick < side + cap { h } else { -h };
                    [rho * t.cos(), rho * t.sin(), z]
                }
            }
            ShapeClass::Cone => {
                // apex at z = 0.8, base disc of radius 0.8 at z = −0.6
                let (r, top, bottom) = (0.8, 0.8, -0.6);
                let height: f64 = top - bottom;
                let slant = (r * r + height * height).sqrt();
                let side = PI * r * slant;
                let base = PI * r * r;
                let t = rng.random_range(0.0..2.0 * PI);
                if rng.random_range(0.0..side + base) < side {
                    // lateral area grows linearly with distance from the apex
                    let f = rng.random::<f64>().sqrt();
                    [f * r * t.cos(), f * r * t.sin(), top - f * height]
                } else {
                    let rho = r * rng.random::<f64>().sqrt();
                    [rho * t.cos(), rho * t.sin(), bottom]
                }
            }
            ShapeClass::Torus => {
                let (big, small) = (0.7, 0.3);
                let u = rng.random_range(0.0..2.0 * PI);
                let v = loop {
                    let v = rng.random_range(0.0..2.0 * PI);
                    if rng.random_range(0.0..big + small) < big + small * f64::cos(v) {
                        break v;
                    }
                };
                let ring = big + small * v.cos();
                [ring * u.cos(), ring * u.sin(), small * v.sin()]
            }
            ShapeClass::Plane => {
                let a = 1.0 / 2f64.sqrt();
                [rng.random_range(-a..a), rng.random_range(-a..a), 0.0]
            }
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Class(s.to_string()))
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// `n` points drawn uniformly (by area) from the surface of `class`, each
/// coordinate jittered by N(0, 0.01²). The cloud is labeled with
/// [`ShapeClass::index`].
///
/// ```
/// use pcdiag_core::data::{generate_shape, ShapeClass};
///
/// let cloud = generate_shape(ShapeClass::Plane, 64, 7).unwrap();
/// assert_eq!(cloud.len(), 64);
/// assert!(cloud.points().iter().all(|p| p[2].abs() <= 0.05));
/// ```
pub fn generate_shape(class: ShapeClass, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::Count(format!("shapes need at least 8 points, asked for {n}")));
    }
    let mut rng = seeding::stream(seed, class.index() as u64, "shape");
    let jitter = Normal::new(0.0, JITTER).expect("positive deviation");
    let points = (0..n)
        .map(|_| {
            let p = class.sample(&mut rng);
            [
                p[0] + jitter.sample(&mut rng),
                p[1] + jitter.sample(&mut rng),
                p[2] + jitter.sample(&mut rng),
            ]
        })
        .collect();
    Ok(PointCloud::new(points)?.with_label(class.index()))
}
