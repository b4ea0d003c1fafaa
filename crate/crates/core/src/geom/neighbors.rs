use super::cloud::{dist_sq, Point};
use crate::error::{Error, Result};

/// Per-center neighbor lists of fixed length, stored flat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    centers: Vec<usize>,
    k: usize,
    neighbors: Vec<usize>,
}

impl NeighborhoodIndex {
    pub fn new(centers: Vec<usize>, k: usize, neighbors: Vec<usize>) -> Result<Self> {
        if neighbors.len() != centers.len() * k {
            return Err(Error::Dimension(format!(
                "{} neighbor indices for {} centers of {k}",
                neighbors.len(),
                centers.len()
            )));
        }
        Ok(NeighborhoodIndex {
            centers,
            k,
            neighbors,
        })
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Neighbors per center.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Neighbor list of the `i`-th center.
    pub fn of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// All neighbor lists concatenated in center order.
    pub fn flat(&self) -> &[usize] {
        &self.neighbors
    }

    /// Each center index repeated `k` times, aligned with [`flat`](Self::flat).
    pub fn centers_repeated(&self) -> Vec<usize> {
        self.centers
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, self.k))
            .collect()
    }
}

fn check_centers(points: &[Point], centers: &[usize]) -> Result<()> {
    match centers.iter().find(|&&c| c >= points.len()) {
        Some(c) => Err(Error::Index(format!(
            "center {c} out of range for {} points",
            points.len()
        ))),
        None => Ok(()),
    }
}

/// Greedy farthest point sampling; ties go to the lowest index.
pub fn farthest_point_sample(points: &[Point], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::Count(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::Index(format!("start {start} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            return Ok(selected);
        }
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let d = dist_sq(&points[j], &points[current]);
            if d < nearest[j] {
                nearest[j] = d;
            }
            if nearest[j] > best_d {
                best_d = nearest[j];
                best = j;
            }
        }
        current = best;
    }
}

fn sorted_by_distance(points: &[Point], center: usize) -> Vec<(f64, usize)> {
    let c = points[center];
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(j, p)| (dist_sq(p, &c), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order
}

/// The `k` nearest points of every center, ordered by (distance, index).
pub fn knn_search(
    points: &[Point],
    centers: &[usize],
    k: usize,
    include_self: bool,
) -> Result<NeighborhoodIndex> {
    check_centers(points, centers)?;
    let avail = if include_self { points.len() } else { points.len() - 1 };
    if k == 0 || k > avail {
        return Err(Error::Count(format!(
            "k = {k} with {avail} candidate neighbors"
        )));
    }
    let mut neighbors = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        neighbors.extend(
            sorted_by_distance(points, c)
                .into_iter()
                .filter(|&(_, j)| include_self || j != c)
                .take(k)
                .map(|(_, j)| j),
        );
    }
    NeighborhoodIndex::new(centers.to_vec(), k, neighbors)
}

/// Up to `k` points within distance `r`, padded by repeating the first hit.
pub fn ball_query(points: &[Point], centers: &[usize], r: f64, k: usize) -> Result<NeighborhoodIndex> {
    check_centers(points, centers)?;
    if !(r > 0.0) || k == 0 {
        return Err(Error::Contract(format!("ball query needs r > 0 and k ≥ 1 (r = {r}, k = {k})")));
    }
    let r2 = r * r;
    let mut neighbors = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        let hits: Vec<usize> = sorted_by_distance(points, c)
            .into_iter()
            .take_while(|&(d, _)| d <= r2)
            .take(k)
            .map(|(_, j)| j)
            .collect();
        let pad = hits.first().copied().unwrap_or(c);
        neighbors.extend(hits.iter().copied());
        neighbors.extend(std::iter::repeat_n(pad, k - hits.len()));
    }
    NeighborhoodIndex::new(centers.to_vec(), k, neighbors)
}

/// Octant of `p` relative to `c`: bit 2 for x, bit 1 for y, bit 0 for z,
/// each set when the difference is ≥ 0. Index 0 is (−,−,−), 7 is (+,+,+).
pub fn octant_of(c: &Point, p: &Point) -> usize {
    let bit = |a: f64, b: f64| usize::from(b - a >= 0.0);
    4 * bit(c[0], p[0]) + 2 * bit(c[1], p[1]) + bit(c[2], p[2])
}

/// Nearest point within `r` in each of the eight octants around `center`;
/// empty octants yield the center's own index. The center itself is never
/// counted as a neighbor.
pub fn octant_neighbors(points: &[Point], center: usize, r: f64) -> Result<[usize; 8]> {
    check_centers(points, &[center])?;
    if !(r > 0.0) {
        return Err(Error::Contract(format!("octant search needs r > 0, got {r}")));
    }
    let c = points[center];
    let r2 = r * r;
    let mut best = [(f64::INFINITY, center); 8];
    for (j, p) in points.iter().enumerate() {
        if j == center {
            continue;
        }
        let d = dist_sq(p, &c);
        if d > r2 {
            continue;
        }
        let slot = &mut best[octant_of(&c, p)];
        if d < slot.0 {
            *slot = (d, j);
        }
    }
    Ok(best.map(|(_, j)| j))
}

/// [`octant_neighbors`] for every listed center, as an index with k = 8.
pub fn octant_index(points: &[Point], centers: &[usize], r: f64) -> Result<NeighborhoodIndex> {
    let mut neighbors = Vec::with_capacity(centers.len() * 8);
    for &c in centers {
        neighbors.extend(octant_neighbors(points, c, r)?);
    }
    NeighborhoodIndex::new(centers.to_vec(), 8, neighbors)
}

/// Gaussian KDE of every neighbor against its own neighborhood:
/// `density(x_j) = (1/K) Σ_k exp(−‖x_j − x_k‖² / 2h²)`.
pub fn kde_density(points: &[Point], nbr: &NeighborhoodIndex, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Contract(format!("bandwidth must be > 0, got {h}")));
    }
    let scale = 1.0 / (2.0 * h * h);
    let k = nbr.k() as f64;
    Ok((0..nbr.len())
        .map(|i| {
            let group = nbr.of(i);
            group
                .iter()
                .map(|&j| {
                    group
                        .iter()
                        .map(|&l| (-dist_sq(&points[j], &points[l]) * scale).exp())
                        .sum::<f64>()
                        / k
                })
                .collect()
        })
        .collect())
}
