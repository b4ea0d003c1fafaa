use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attack::{attack_all_targets, AttackConfig};
use super::local::{information_concentration, neighborhood_inconsistency};
use super::rotation::{rotation_non_robustness, sample_rotations};
use super::sigma::{optimize_sigma, Probe, SigmaOptConfig};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, RotationMode};
use crate::nets::Classifier;
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Discarding,
    Concentration,
    Rotation,
    Adversarial,
    Neighborhood,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Discarding,
        Metric::Concentration,
        Metric::Rotation,
        Metric::Adversarial,
        Metric::Neighborhood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Discarding => "discarding",
            Metric::Concentration => "concentration",
            Metric::Rotation => "rotation",
            Metric::Adversarial => "adversarial",
            Metric::Neighborhood => "neighborhood",
        }
    }

    /// Column name in reports.
    pub fn report_name(self) -> &'static str {
        match self {
            Metric::Discarding => "information_discarding",
            Metric::Concentration => "information_concentration",
            Metric::Rotation => "rotation_non_robustness",
            Metric::Adversarial => "adversarial_robustness",
            Metric::Neighborhood => "neighborhood_inconsistency",
        }
    }

    fn needs_sigma(self) -> bool {
        matches!(self, Metric::Discarding | Metric::Concentration | Metric::Neighborhood)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown metric `{s}`")))
    }
}

/// Parses a comma-separated metric list; `all` selects every metric.
pub fn parse_metrics(list: &str) -> Result<BTreeSet<Metric>> {
    let mut out = BTreeSet::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if part == "all" {
            out.extend(Metric::ALL);
        } else {
            out.insert(part.parse()?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    pub sigma: SigmaOptConfig,
    pub rotations: usize,
    pub rotation_mode: RotationMode,
    pub attack: AttackConfig,
    pub neighbors: usize,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        DiagnosisConfig {
            sigma: SigmaOptConfig::default(),
            rotations: 4,
            rotation_mode: RotationMode::So3,
            attack: AttackConfig::default(),
            neighbors: 16,
        }
    }
}

/// Averages over the diagnosed samples; `None` for metrics not selected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub information_discarding: Option<f64>,
    pub information_concentration: Option<f64>,
    pub rotation_non_robustness: Option<f64>,
    pub adversarial_robustness: Option<f64>,
    pub neighborhood_inconsistency: Option<f64>,
}

impl MetricValues {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Discarding => self.information_discarding,
            Metric::Concentration => self.information_concentration,
            Metric::Rotation => self.rotation_non_robustness,
            Metric::Adversarial => self.adversarial_robustness,
            Metric::Neighborhood => self.neighborhood_inconsistency,
        }
    }

    fn set(&mut self, m: Metric, v: f64) {
        let slot = match m {
            Metric::Discarding => &mut self.information_discarding,
            Metric::Concentration => &mut self.information_concentration,
            Metric::Rotation => &mut self.rotation_non_robustness,
            Metric::Adversarial => &mut self.adversarial_robustness,
            Metric::Neighborhood => &mut self.neighborhood_inconsistency,
        };
        *slot = Some(v);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub sample: usize,
    pub target: usize,
    pub success: bool,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub model_id: String,
    pub seed: u64,
    pub config: DiagnosisConfig,
    pub metrics: MetricValues,
    /// Per-point entropies, one vector per diagnosed sample.
    #[serde(rename = "per_point_H")]
    pub per_point_h: Vec<Vec<f64>>,
    /// Rotation-pair JSD values, one vector per diagnosed sample.
    pub per_pair_jsd: Vec<Vec<f64>>,
    pub attacks: Vec<AttackSummary>,
}

impl DiagnosisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One `model_id,metric,value` row per selected metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_id,metric,value\n");
        for m in Metric::ALL {
            if let Some(v) = self.metrics.get(m) {
                let _ = writeln!(out, "{},{},{}", self.model_id, m.report_name(), v);
            }
        }
        out
    }
}

/// Everything measured on one cloud.
#[derive(Default)]
struct SampleResult {
    values: Vec<(Metric, f64)>,
    entropies: Option<Vec<f64>>,
    jsd: Option<Vec<f64>>,
    attacks: Vec<AttackSummary>,
}

fn diagnose_one(
    model: &Classifier,
    cloud: &PointCloud,
    index: usize,
    metrics: &BTreeSet<Metric>,
    config: &DiagnosisConfig,
    seed: u64,
) -> Result<SampleResult> {
    let mut out = SampleResult::default();
    let points = cloud.points();
    let plan = model.plan(points)?;
    let index = index as u64;
    if metrics.iter().any(|m| m.needs_sigma()) {
        let probe = Probe::new(model, &plan, points);
        let field = optimize_sigma(&probe, &config.sigma, seeding::derive_seed(seed, index, "sigma"))?.field;
        let h = field.entropies();
        if metrics.contains(&Metric::Discarding) {
            out.values.push((Metric::Discarding, field.total_entropy()));
        }
        if metrics.contains(&Metric::Concentration) {
            let mask = cloud
                .mask()
                .ok_or_else(|| Error::Mask("concentration needs a foreground mask".into()))?;
            out.values.push((Metric::Concentration, information_concentration(&h, mask)?));
        }
        if metrics.contains(&Metric::Neighborhood) {
            out.values.push((
                Metric::Neighborhood,
                neighborhood_inconsistency(&h, points, config.neighbors)?,
            ));
        }
        out.entropies = Some(h);
    }
    if metrics.contains(&Metric::Rotation) {
        let rots = sample_rotations(
            config.rotations,
            config.rotation_mode,
            seeding::derive_seed(seed, index, "rotation"),
        );
        let r = rotation_non_robustness(
            model,
            points,
            &rots,
            &config.sigma,
            seeding::derive_seed(seed, index, "rotation"),
        )?;
        out.values.push((Metric::Rotation, r.value));
        out.jsd = Some(r.per_pair);
    }
    if metrics.contains(&Metric::Adversarial) {
        let outcome = attack_all_targets(model, points, &plan, &config.attack)?;
        out.attacks = outcome
            .attacks
            .iter()
            .map(|a| AttackSummary {
                sample: index as usize,
                target: a.target,
                success: a.success,
                l2: a.l2,
            })
            .collect();
        out.values.push((Metric::Adversarial, outcome.reliable_mean()?));
    }
    Ok(out)
}

/// Runs the selected metrics on every cloud at the model's tap layer and
/// averages them. Samples run on the current rayon pool; each draws from
/// streams keyed by its index and results are reduced in index order, so
/// the report does not depend on the thread count.
pub fn diagnose(
    model: &Classifier,
    model_id: &str,
    samples: &[PointCloud],
    metrics: &BTreeSet<Metric>,
    config: &DiagnosisConfig,
    seed: u64,
) -> Result<DiagnosisReport> {
    let mut report = DiagnosisReport {
        model_id: model_id.to_string(),
        seed,
        config: config.clone(),
        metrics: MetricValues::default(),
        per_point_h: Vec::new(),
        per_pair_jsd: Vec::new(),
        attacks: Vec::new(),
    };
    if metrics.is_empty() {
        return Ok(report);
    }
    if samples.is_empty() {
        return Err(Error::Count("no samples to diagnose".into()));
    }
    if metrics.contains(&Metric::Concentration) {
        if let Some(i) = samples.iter().position(|c| c.mask().is_none()) {
            return Err(Error::Mask("concentration needs masked clouds".into()).at_sample(i));
        }
    }
    if let Some(i) = samples.iter().position(|c| c.label().is_some_and(|l| l >= model.classes())) {
        return Err(Error::Label(format!("label beyond the model's {} classes", model.classes())).at_sample(i));
    }
    let results: Vec<Result<SampleResult>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, c)| diagnose_one(model, c, i, metrics, config, seed).map_err(|e| e.at_sample(i)))
        .collect();
    let mut sums = std::collections::BTreeMap::new();
    for r in results {
        let r = r?;
        for (m, v) in r.values {
            *sums.entry(m).or_insert(0.0) += v;
        }
        report.per_point_h.extend(r.entropies);
        report.per_pair_jsd.extend(r.jsd);
        report.attacks.extend(r.attacks);
    }
    for (m, total) in sums {
        report.metrics.set(m, total / samples.len() as f64);
    }
    Ok(report)
}
