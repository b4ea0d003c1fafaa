//! Frozen sampling and grouping decisions.
//!
//! A network asks for neighborhoods through a list of [`ContextRequest`]s,
//! one per layer. [`build_fixed_contexts`] answers them once on a clean
//! cloud; forwards on perturbed copies then reuse the same indices, so every
//! feature is computed from the same point set and varies continuously with
//! the perturbation.

use serde::{Deserialize, Serialize};

use super::cloud::{mean_nn_distance, Point};
use super::neighbors::{ball_query, farthest_point_sample, knn_search, octant_index, NeighborhoodIndex};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Knn { k: usize },
    Ball { radius: f64, k: usize },
}

impl GroupKind {
    pub fn k(&self) -> usize {
        match *self {
            GroupKind::Knn { k } | GroupKind::Ball { k, .. } => k,
        }
    }
}

/// What one layer needs from the geometry of the current point level.
#[derive(Clone, Debug, PartialEq)]
pub enum ContextRequest {
    /// Farthest point sampling of `m` centers from the current level.
    Sample { m: usize },
    /// Neighborhoods of the sampled centers (or of every point if none were sampled).
    Group { kind: GroupKind },
    /// One kNN neighborhood per scale around the sampled centers.
    MultiScale { scales: Vec<usize> },
    /// Octant neighbors of every point of the current level.
    Octant { radius: f64 },
    /// kNN of every point excluding itself; the level is unchanged.
    Neighbors { k: usize },
    /// Aggregation over the last grouping: its centers become the new level.
    Pool,
    /// Aggregation over the whole level; no geometry remains afterwards.
    GlobalPool,
    None,
}

/// The frozen answer to one [`ContextRequest`]. Every index is local to the
/// point level the layer sees; [`PlanStep::level`] maps it back to the cloud.
#[derive(Clone, Debug, PartialEq)]
pub enum PlanStep {
    Sample { centers: Vec<usize> },
    Group { nbr: NeighborhoodIndex, bandwidth: f64 },
    MultiScale { nbrs: Vec<NeighborhoodIndex>, bandwidth: f64 },
    Octant { nbr: NeighborhoodIndex },
    Neighbors { nbr: NeighborhoodIndex },
    Pool,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextPlan {
    n_points: usize,
    steps: Vec<PlanStep>,
    levels: Vec<Vec<usize>>,
}

impl ContextPlan {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn step(&self, i: usize) -> &PlanStep {
        &self.steps[i]
    }

    /// Indices into the original cloud of the points visible to layer `i`
    /// (empty after a global aggregation).
    pub fn level(&self, i: usize) -> &[usize] {
        &self.levels[i]
    }
}

pub fn build_fixed_contexts(points: &[Point], requests: &[ContextRequest]) -> Result<ContextPlan> {
    let n = points.len();
    let mut level: Vec<usize> = (0..n).collect();
    let mut pending: Option<Vec<usize>> = None;
    let mut grouped: Option<Vec<usize>> = None;
    let mut steps = Vec::with_capacity(requests.len());
    let mut levels = Vec::with_capacity(requests.len());
    let fail = |i: usize, e: Error| match e {
        Error::Count(msg) => Error::Count(format!("layer {i}: {msg}")),
        other => other,
    };

    for (i, req) in requests.iter().enumerate() {
        levels.push(level.clone());
        let pos: Vec<Point> = level.iter().map(|&j| points[j]).collect();
        let needs_points = !matches!(req, ContextRequest::None | ContextRequest::GlobalPool);
        if needs_points && level.is_empty() {
            return Err(Error::Contract(format!(
                "layer {i} needs point geometry after a global aggregation"
            )));
        }
        let step = match req {
            ContextRequest::Sample { m } => {
                let centers = farthest_point_sample(&pos, *m, 0).map_err(|e| fail(i, e))?;
                pending = Some(centers.clone());
                PlanStep::Sample { centers }
            }
            ContextRequest::Group { kind } => {
                let centers = pending.take().unwrap_or_else(|| (0..pos.len()).collect());
                let nbr = match *kind {
                    GroupKind::Knn { k } => knn_search(&pos, &centers, k, true),
                    GroupKind::Ball { radius, k } => ball_query(&pos, &centers, radius, k),
                }
                .map_err(|e| fail(i, e))?;
                grouped = Some(centers);
                PlanStep::Group {
                    nbr,
                    bandwidth: bandwidth_of(&pos),
                }
            }
            ContextRequest::MultiScale { scales } => {
                let centers = pending.take().unwrap_or_else(|| (0..pos.len()).collect());
                let nbrs = scales
                    .iter()
                    .map(|&k| knn_search(&pos, &centers, k, true))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| fail(i, e))?;
                level = centers.iter().map(|&c| level[c]).collect();
                PlanStep::MultiScale {
                    nbrs,
                    bandwidth: bandwidth_of(&pos),
                }
            }
            ContextRequest::Octant { radius } => {
                let all: Vec<usize> = (0..pos.len()).collect();
                PlanStep::Octant {
                    nbr: octant_index(&pos, &all, *radius)?,
                }
            }
            ContextRequest::Neighbors { k } => {
                let all: Vec<usize> = (0..pos.len()).collect();
                PlanStep::Neighbors {
                    nbr: knn_search(&pos, &all, *k, false).map_err(|e| fail(i, e))?,
                }
            }
            ContextRequest::Pool => {
                if let Some(centers) = grouped.take() {
                    level = centers.iter().map(|&c| level[c]).collect();
                }
                PlanStep::Pool
            }
            ContextRequest::GlobalPool => {
                level.clear();
                pending = None;
                grouped = None;
                PlanStep::Pool
            }
            ContextRequest::None => PlanStep::None,
        };
        steps.push(step);
    }
    Ok(ContextPlan {
        n_points: n,
        steps,
        levels,
    })
}

/// KDE bandwidth for a level: its mean nearest-neighbor distance, floored so
/// that a degenerate level (all points coincident) stays usable.
fn bandwidth_of(points: &[Point]) -> f64 {
    mean_nn_distance(points).max(1e-6)
}
