use crate::error::{Error, Result};
use crate::geom::{knn_search, Point};

/// Mean entropy over background points minus the mean over foreground points.
pub fn information_concentration(entropies: &[f64], mask: &[bool]) -> Result<f64> {
    if entropies.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} entropies with a mask of {}",
            entropies.len(),
            mask.len()
        )));
    }
    let mean = |fg: bool| {
        let vals: Vec<f64> = entropies
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m == fg)
            .map(|(h, _)| *h)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    match (mean(false), mean(true)) {
        (Some(bg), Some(fg)) => Ok(bg - fg),
        _ => Err(Error::Mask("concentration needs both foreground and background points".into())),
    }
}

/// Mean over points of the entropy range within each point's `k` nearest
/// neighbors (the point itself excluded).
pub fn neighborhood_inconsistency(entropies: &[f64], points: &[Point], k: usize) -> Result<f64> {
    let n = points.len();
    if entropies.len() != n {
        return Err(Error::Dimension(format!("{} entropies for {n} points", entropies.len())));
    }
    if n <= k {
        return Err(Error::Count(format!("{n} points cannot have {k} neighbors each")));
    }
    let all: Vec<usize> = (0..n).collect();
    let nbr = knn_search(points, &all, k, false)?;
    let total: f64 = (0..n)
        .map(|i| {
            let (lo, hi) = nbr
                .of(i)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
                    (lo.min(entropies[j]), hi.max(entropies[j]))
                });
            hi - lo
        })
        .sum();
    Ok(total / n as f64)
}
