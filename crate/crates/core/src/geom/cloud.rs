use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// A labeled point set with an optional foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    label: Option<usize>,
    mask: Option<Vec<bool>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Count("a point cloud needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Contract(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            points,
            label: None,
            mask: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    /// Attaches a foreground mask (`true` = foreground).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.points.len() {
            return Err(Error::Dimension(format!(
                "mask of length {} for {} points",
                mask.len(),
                self.points.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Same label and mask, new coordinates.
    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::Dimension(format!(
                "{} replacement points for a cloud of {}",
                points.len(),
                self.points.len()
            )));
        }
        let mut out = PointCloud::new(points)?;
        out.label = self.label;
        out.mask = self.mask.clone();
        Ok(out)
    }

    /// Coordinates as a `[3 × n]` tensor: row 0 holds every x, row 1 every y, row 2 every z.
    pub fn to_tensor(&self) -> Tensor {
        points_to_tensor(&self.points)
    }
}

pub fn points_to_tensor(points: &[Point]) -> Tensor {
    let n = points.len();
    let mut data = vec![0.0; 3 * n];
    for (j, p) in points.iter().enumerate() {
        for r in 0..3 {
            data[r * n + j] = p[r];
        }
    }
    Tensor::matrix(3, n, data).expect("3 × n layout")
}

pub fn tensor_to_points(t: &Tensor) -> Result<Vec<Point>> {
    let (rows, n) = t.dims2();
    if rows != 3 {
        return Err(Error::Dimension(format!("expected a [3 × n] tensor, got {:?}", t.shape())));
    }
    let d = t.data();
    Ok((0..n).map(|j| [d[j], d[n + j], d[2 * n + j]]).collect())
}

#[inline]
pub fn dist_sq(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Mean distance from each point to its nearest other point; 0 for a single point.
pub fn mean_nn_distance(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist_sq(&points[i], &points[j]))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / n as f64
}
