use std::fs;
use std::path::{Path, PathBuf};

use pcdiag_core::data::{DatasetConfig, ShapeClass};
use pcdiag_core::diagnostics::{parse_metrics, AttackConfig, DiagnosisConfig, Metric, SigmaOptConfig};
use pcdiag_core::geom::RotationMode;
use pcdiag_core::nets::{
    desk_network, Arch1Placement, Arch2Placement, Arch3Placement, Arch4Placement, ArchToggles, DeskConfig,
    NetworkSpec, SaBlock, TrainConfig,
};
use pcdiag_core::autograd::OptimizerKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One JSON document drives every command. Only `seed` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub diagnosis: DiagnosisSection,
    /// Comparative studies run by `compare`.
    #[serde(default)]
    pub studies: Vec<Study>,
}

/// Either a manifest of files on disk or the parameters to generate one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub background: bool,
    pub background_points: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::new(0);
        DataSection {
            manifest: None,
            classes: d.classes,
            train_per_class: d.train_per_class,
            test_per_class: d.test_per_class,
            points: d.points,
            background: d.background,
            background_points: d.background_points,
        }
    }
}

impl DataSection {
    pub fn generation(&self, seed: u64) -> DatasetConfig {
        DatasetConfig {
            classes: self.classes.clone(),
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            points: self.points,
            background: self.background,
            background_points: self.background_points,
            seed,
        }
    }
}

/// The desk baseline with optional overrides and architecture placements,
/// or an explicit network spec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub spec: Option<NetworkSpec>,
    pub blocks: Option<Vec<SaBlock>>,
    pub fc_hidden: Option<usize>,
    pub arch1: Option<Arch1Placement>,
    pub arch2: Option<Arch2Placement>,
    pub arch3: Option<Arch3Placement>,
    pub arch4: Option<Arch4Placement>,
}

impl ModelSection {
    pub fn toggles(&self) -> ArchToggles {
        ArchToggles {
            arch1: self.arch1.clone(),
            arch2: self.arch2.clone(),
            arch3: self.arch3.clone(),
            arch4: self.arch4.clone(),
        }
    }

    fn has_toggles(&self) -> bool {
        self.toggles() != ArchToggles::none()
    }

    pub fn desk(&self, points: usize, classes: usize) -> DeskConfig {
        let mut cfg = DeskConfig::baseline(points, classes);
        if let Some(b) = &self.blocks {
            cfg.blocks = b.clone();
        }
        if let Some(h) = self.fc_hidden {
            cfg.fc_hidden = h;
        }
        cfg
    }

    /// The network for clouds of `points` points and `classes` classes.
    pub fn network(&self, points: usize, classes: usize, toggles: &ArchToggles) -> CliResult<NetworkSpec> {
        match &self.spec {
            Some(spec) => {
                if *toggles != ArchToggles::none() {
                    return Err(CliError::config("architecture toggles apply to the desk network, not an explicit `model.spec`"));
                }
                if spec.points != points {
                    return Err(CliError::config(format!(
                        "model.spec expects {} points, the data has {points}",
                        spec.points
                    )));
                }
                Ok(spec.clone())
            }
            None => Ok(desk_network(&self.desk(points, classes), toggles)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub rotation: RotationMode,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 30,
            batch: 16,
            lr: 0.002,
            optimizer: OptimizerKind::Adam,
            rotation: RotationMode::None,
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
            rotation: self.rotation,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisSection {
    /// Comma-separated list or array entries; `all` selects every metric.
    pub metrics: Vec<String>,
    /// Test clouds diagnosed, taken round-robin over the classes.
    pub samples: usize,
    pub sigma: SigmaOptConfig,
    pub rotations: usize,
    pub rotation_mode: RotationMode,
    pub attack: AttackConfig,
    pub neighbors: usize,
}

impl Default for DiagnosisSection {
    fn default() -> Self {
        let d = DiagnosisConfig::default();
        DiagnosisSection {
            metrics: vec!["all".into()],
            samples: 4,
            sigma: d.sigma,
            rotations: d.rotations,
            rotation_mode: d.rotation_mode,
            attack: d.attack,
            neighbors: d.neighbors,
        }
    }
}

impl DiagnosisSection {
    pub fn diagnosis_config(&self) -> DiagnosisConfig {
        DiagnosisConfig {
            sigma: self.sigma.clone(),
            rotations: self.rotations,
            rotation_mode: self.rotation_mode,
            attack: self.attack.clone(),
            neighbors: self.neighbors,
        }
    }

    pub fn metric_set(&self) -> CliResult<std::collections::BTreeSet<Metric>> {
        parse_metric_list(&self.metrics.join(","))
    }
}

pub fn parse_metric_list(list: &str) -> CliResult<std::collections::BTreeSet<Metric>> {
    parse_metrics(list).map_err(|e| CliError::config(format!("{e} (choose from discarding, concentration, rotation, adversarial, neighborhood, all)")))
}

/// A with/without comparison of one architecture module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub arch: u8,
    /// Defaults to the metrics the module's hypothesis is about.
    #[serde(default)]
    pub metrics: Option<Vec<Metric>>,
    /// Training rotation for both variants; defaults to `training.rotation`.
    #[serde(default)]
    pub rotation: Option<RotationMode>,
}

impl Study {
    pub fn metrics(&self) -> Vec<Metric> {
        self.metrics.clone().unwrap_or_else(|| match self.arch {
            1 => vec![Metric::Adversarial],
            2 | 4 => vec![Metric::Rotation],
            _ => vec![Metric::Adversarial, Metric::Neighborhood],
        })
    }

    pub fn name(&self) -> String {
        format!("arch{}", self.arch)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| pcdiag_core::Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        self.diagnosis.metric_set()?;
        self.diagnosis.sigma.validate()?;
        if self.model.spec.is_some() && self.model.has_toggles() {
            return Err(CliError::config("`model.spec` cannot be combined with architecture placements"));
        }
        for s in &self.studies {
            if !(1..=4).contains(&s.arch) {
                return Err(CliError::config(format!("study arch must be 1–4, got {}", s.arch)));
            }
            if self.model.spec.is_some() {
                return Err(CliError::config("studies need the desk network, not `model.spec`"));
            }
        }
        // with generated data the cloud size is known, so placements can be
        // checked before any work starts
        if self.model.spec.is_none() && self.dataset.manifest.is_none() {
            let points = self.dataset.generation(self.seed).cloud_points();
            desk_network(&self.model.desk(points, self.dataset.classes.len()), &self.model.toggles())?;
        }
        Ok(())
    }

    /// Applies `--seed`.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }
}
