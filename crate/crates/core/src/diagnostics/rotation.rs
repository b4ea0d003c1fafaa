use serde::{Deserialize, Serialize};

use super::divergence::jsd_variational;
use super::sigma::{optimize_sigma, Probe, SigmaField, SigmaOptConfig};
use crate::error::{Error, Result};
use crate::geom::{random_rotation, Point, Rotation, RotationMode};
use crate::nets::Classifier;
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationOutcome {
    /// Mean JSD over all unordered rotation pairs.
    pub value: f64,
    /// JSD of pairs (0,1), (0,2), …, (R−2,R−1).
    pub per_pair: Vec<f64>,
    pub fields: Vec<SigmaField>,
}

/// Mean pairwise variational JSD between the σ fields of rotated copies.
///
/// Each field is optimized on `θ_r(X + δ)`: the noise lives in the
/// cloud's own frame so every σ stays index-aligned across rotations, and
/// the contexts are planned on the rotated clean cloud `θ_r(X)`. All
/// rotations share one optimization seed, so identical rotations give
/// identical fields.
pub fn rotation_non_robustness(
    model: &Classifier,
    points: &[Point],
    rotations: &[Rotation],
    config: &SigmaOptConfig,
    seed: u64,
) -> Result<RotationOutcome> {
    if rotations.len() < 2 {
        return Err(Error::Count(format!("need at least 2 rotations, got {}", rotations.len())));
    }
    let sigma_seed = seeding::derive_seed(seed, 0, "rotation-sigma");
    let mut fields = Vec::with_capacity(rotations.len());
    for rot in rotations {
        let rotated: Vec<Point> = points.iter().map(|p| rot.apply(p)).collect();
        let plan = model.plan(&rotated)?;
        let probe = Probe::new(model, &plan, points).rotated(*rot);
        fields.push(optimize_sigma(&probe, config, sigma_seed)?.field);
    }
    let mut per_pair = Vec::new();
    for i in 0..fields.len() {
        for j in (i + 1)..fields.len() {
            per_pair.push(jsd_variational(&fields[i], &fields[j])?);
        }
    }
    Ok(RotationOutcome {
        value: per_pair.iter().sum::<f64>() / per_pair.len() as f64,
        per_pair,
        fields,
    })
}

/// `count` rotations drawn from the stream of `seed`.
pub fn sample_rotations(count: usize, mode: RotationMode, seed: u64) -> Vec<Rotation> {
    let mut rng = seeding::stream(seed, 0, "rotations");
    (0..count).map(|_| random_rotation(&mut rng, mode)).collect()
}
