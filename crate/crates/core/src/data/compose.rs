use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geom::{mean_nn_distance, Point, PointCloud};
use crate::seeding;

/// Smallest and largest gap between the foreground's bounding sphere and the
/// background's, as fractions of the foreground radius.
pub const SHELL_GAP: (f64, f64) = (0.2, 1.0);

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for r in 0..3 {
            c[r] += p[r];
        }
    }
    c.map(|v| v / n)
}

fn radius_about(points: &[Point], c: Point) -> f64 {
    points
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Surrounds `fg` with `n_bg` points taken from a cloud of another class.
///
/// The background subset is rescaled about its centroid so its mean
/// nearest-neighbor distance equals the foreground's, then moved in a random
/// direction until the gap between the two bounding spheres is a random
/// fraction in [`SHELL_GAP`] of the foreground radius. Foreground points come
/// first; the mask marks them `true` and the label stays the foreground's.
pub fn compose_background(fg: &PointCloud, donor: &PointCloud, n_bg: usize, seed: u64) -> Result<PointCloud> {
    if fg.label() == donor.label() {
        return Err(Error::Label(format!(
            "background donor must have a different label than the foreground ({:?})",
            fg.label()
        )));
    }
    if donor.len() < n_bg {
        return Err(Error::Count(format!("donor has {} points, {n_bg} requested", donor.len())));
    }
    if n_bg < 2 || fg.len() < 2 {
        return Err(Error::Count("composition needs at least 2 points on each side".into()));
    }
    let mut rng = seeding::stream(seed, 0, "background");
    let picked: Vec<Point> = index::sample(&mut rng, donor.len(), n_bg)
        .into_iter()
        .map(|i| donor.points()[i])
        .collect();

    let fg_pts = fg.points();
    let fg_center = centroid(fg_pts);
    let fg_radius = radius_about(fg_pts, fg_center);
    let bg_spacing = mean_nn_distance(&picked);
    if fg_radius <= 0.0 || bg_spacing <= 0.0 {
        return Err(Error::Degenerate("coincident points in composition".into()));
    }
    let scale = mean_nn_distance(fg_pts) / bg_spacing;
    let bg_center = centroid(&picked);
    let scaled: Vec<Point> = picked
        .iter()
        .map(|p| [0, 1, 2].map(|r| (p[r] - bg_center[r]) * scale))
        .collect();
    let bg_radius = radius_about(&scaled, [0.0; 3]);

    let dir = loop {
        let v: [f64; 3] = [0; 3].map(|_| rng.sample(StandardNormal));
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            break v.map(|c| c / norm);
        }
    };
    let gap = rng.random_range(SHELL_GAP.0..=SHELL_GAP.1) * fg_radius;
    let offset = fg_radius + gap + bg_radius;
    let target = [0, 1, 2].map(|r| fg_center[r] + dir[r] * offset);

    let mut points = fg_pts.to_vec();
    points.extend(scaled.iter().map(|p| [0, 1, 2].map(|r| p[r] + target[r])));
    let mut mask = vec![true; fg.len()];
    mask.resize(fg.len() + n_bg, false);
    let out = PointCloud::new(points)?.with_mask(mask)?;
    Ok(match fg.label() {
        Some(l) => out.with_label(l),
        None => out,
    })
}

/// Centers the cloud on its centroid and scales it to unit bounding radius.
/// Label and mask are kept.
///
/// ```
/// use pcdiag_core::data::normalize;
/// use pcdiag_core::geom::PointCloud;
///
/// let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
/// let unit = normalize(&cloud).unwrap();
/// assert_eq!(unit.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
/// ```
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    let c = centroid(cloud.points());
    let centered: Vec<Point> = cloud.points().iter().map(|p| [0, 1, 2].map(|r| p[r] - c[r])).collect();
    let radius = radius_about(&centered, [0.0; 3]);
    if !(radius > 1e-12) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    cloud.with_points(centered.iter().map(|p| p.map(|v| v / radius)).collect())
}
