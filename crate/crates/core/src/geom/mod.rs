//! Sampling, neighborhood search, densities, rotations and frozen contexts.
//!
//! Everything here is brute force over squared distances: clouds are at
//! most a few thousand points and exact, tie-stable results matter more
//! than asymptotics.

mod cloud;
mod context;
mod neighbors;
mod rotation;

pub use cloud::{dist_sq, mean_nn_distance, points_to_tensor, tensor_to_points, Point, PointCloud};
pub use context::{build_fixed_contexts, ContextPlan, ContextRequest, GroupKind, PlanStep};
pub use neighbors::{
    ball_query, farthest_point_sample, kde_density, knn_search, octant_index, octant_neighbors,
    octant_of, NeighborhoodIndex,
};
pub use rotation::{apply_rotation, random_rotation, Rotation, RotationMode};

#[cfg(test)]
mod tests;
