//! The five information-theoretic diagnostics of a point-cloud network:
//! information discarding and concentration, rotation non-robustness,
//! adversarial robustness and neighborhood inconsistency.
//!
//! All of them measure the tapped feature `h(X)` of a [`Classifier`](crate::nets::Classifier)
//! with contexts frozen on the clean cloud.

mod attack;
mod divergence;
mod local;
mod report;
mod rotation;
mod sigma;

pub use attack::{
    adversarial_robustness, attack_all_targets, targeted_attack, AdversarialOutcome, AttackConfig, AttackResult,
};
pub use divergence::{gaussian_kl, jsd_variational};
pub use local::{information_concentration, neighborhood_inconsistency};
pub use report::{
    diagnose, parse_metrics, AttackSummary, DiagnosisConfig, DiagnosisReport, Metric, MetricValues,
};
pub use rotation::{rotation_non_robustness, sample_rotations, RotationOutcome};
pub use sigma::{
    inherent_variance, optimize_sigma, LambdaEval, Probe, SigmaField, SigmaOptConfig, SigmaOutcome, HALF_LOG_2PIE,
    SIGMA_CAP, SIGMA_MIN,
};
