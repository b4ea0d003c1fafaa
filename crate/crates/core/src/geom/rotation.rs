use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::autograd::Tensor;
use crate::error::Result;

/// Which rotations are drawn for augmentation and diagnosis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RotationMode {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "z-axis")]
    ZAxis,
    #[serde(rename = "so3")]
    So3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    pub matrix: [[f64; 3]; 3],
    pub mode: RotationMode,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            mode: RotationMode::None,
        }
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation {
            matrix: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            mode: RotationMode::ZAxis,
        }
    }

    /// Rotation of a unit quaternion `(w, x, y, z)`; the input is normalized first.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        Rotation {
            matrix: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
            mode: RotationMode::So3,
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    /// `self · other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.matrix[r][k] * other.matrix[k][c]).sum();
            }
        }
        Rotation {
            matrix: out,
            mode: if self.mode == other.mode { self.mode } else { RotationMode::So3 },
        }
    }

    pub fn transpose(&self) -> Rotation {
        let m = &self.matrix;
        Rotation {
            matrix: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
            mode: self.mode,
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// The matrix as a `[3 × 3]` tensor, so `R · X` rotates a `[3 × n]` cloud.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(3, 3, self.matrix.iter().flatten().copied().collect()).expect("3 × 3")
    }
}

/// Draws a rotation: uniform on SO(3) via a normalized Gaussian quaternion,
/// or a uniform angle about z. [`RotationMode::None`] yields the identity.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, mode: RotationMode) -> Rotation {
    match mode {
        RotationMode::None => Rotation::identity(),
        RotationMode::ZAxis => Rotation::about_z(rng.random_range(0.0..TAU)),
        RotationMode::So3 => loop {
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            if q.iter().map(|v| v * v).sum::<f64>() > 1e-12 {
                return Rotation::from_quaternion(q);
            }
        },
    }
}

pub fn apply_rotation(cloud: &PointCloud, rot: &Rotation) -> Result<PointCloud> {
    cloud.with_points(cloud.points().iter().map(|p| rot.apply(p)).collect())
}
