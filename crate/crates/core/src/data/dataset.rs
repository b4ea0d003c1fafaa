use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compose::{compose_background, normalize};
use super::io::{load_xyz, write_xyz};
use super::shapes::{generate_shape, ShapeClass};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::seeding;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn default_classes() -> Vec<ShapeClass> {
    ShapeClass::ALL.to_vec()
}
fn default_train() -> usize {
    200
}
fn default_test() -> usize {
    50
}
fn default_points() -> usize {
    256
}
fn default_background_points() -> usize {
    128
}

/// What [`build_dataset`] generates. Only the seed is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_classes")]
    pub classes: Vec<ShapeClass>,
    #[serde(default = "default_train")]
    pub train_per_class: usize,
    #[serde(default = "default_test")]
    pub test_per_class: usize,
    /// Foreground points per cloud.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub background: bool,
    #[serde(default = "default_background_points")]
    pub background_points: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(seed: u64) -> Self {
        DatasetConfig {
            classes: default_classes(),
            train_per_class: default_train(),
            test_per_class: default_test(),
            points: default_points(),
            background: false,
            background_points: default_background_points(),
            seed,
        }
    }

    /// Points in every generated cloud, background included.
    pub fn cloud_points(&self) -> usize {
        self.points + if self.background { self.background_points } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Count("dataset needs at least one class".into()));
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::Contract("dataset classes must be distinct".into()));
        }
        if self.background && self.classes.len() < 2 {
            return Err(Error::Label("background composition needs a second class as donor".into()));
        }
        Ok(())
    }
}

/// Clouds held in memory, labeled by position in `classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn generate_split(config: &DatasetConfig, split: Split) -> Result<Vec<PointCloud>> {
    let per_class = match split {
        Split::Train => config.train_per_class,
        Split::Test => config.test_per_class,
    };
    let k = config.classes.len();
    let mut out = Vec::with_capacity(k * per_class);
    for (label, &class) in config.classes.iter().enumerate() {
        for j in 0..per_class {
            let index = (label * per_class + j) as u64;
            let seed = seeding::derive_seed(config.seed, index, split.name());
            let fg = generate_shape(class, config.points, seed)?.with_label(label);
            let cloud = if config.background {
                let donor_label = (label + 1) % k;
                let donor_seed = seeding::derive_seed(config.seed, index, &format!("{}-donor", split.name()));
                let donor_points = config.points.max(config.background_points);
                let donor = generate_shape(config.classes[donor_label], donor_points, donor_seed)?
                    .with_label(donor_label);
                compose_background(&fg, &donor, config.background_points, seed)?
            } else {
                fg
            };
            out.push(normalize(&cloud)?);
        }
    }
    Ok(out)
}

/// Generates both splits in memory, exactly as [`build_dataset`] writes them.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    Ok(Dataset {
        classes: config.classes.iter().map(|c| c.name().to_string()).collect(),
        train: generate_split(config, Split::Train)?,
        test: generate_split(config, Split::Test)?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub file: String,
    pub label: usize,
    pub bg: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: String,
    pub classes: Vec<String>,
    pub splits: Splits,
    pub seed: u64,
    pub version: u32,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.splits.train,
            Split::Test => &self.splits.test,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Reads and checks a manifest; does not touch the listed files.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        let classes = manifest.classes.len();
        for split in [Split::Train, Split::Test] {
            if let Some(e) = manifest.entries(split).iter().find(|e| e.label >= classes) {
                return Err(Error::Label(format!("{}: label {} with {classes} classes", e.file, e.label)));
            }
        }
        Ok(manifest)
    }
}

/// Loads every cloud of `split` listed in the manifest at `manifest_path`.
pub fn load_split(manifest_path: impl AsRef<Path>, manifest: &DatasetManifest, split: Split) -> Result<Vec<PointCloud>> {
    let base = manifest_path.as_ref().parent().unwrap_or(Path::new("."));
    manifest
        .entries(split)
        .iter()
        .map(|e| {
            let cloud = load_xyz(base.join(&e.file))?.with_label(e.label);
            if e.bg && cloud.mask().is_none() {
                return Err(Error::Mask(format!("{} is listed with background but has no mask", e.file)));
            }
            Ok(cloud)
        })
        .collect()
}

/// Loads the manifest and both splits.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<(DatasetManifest, Dataset)> {
    let path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(path)?;
    let data = Dataset {
        classes: manifest.classes.clone(),
        train: load_split(path, &manifest, Split::Train)?,
        test: load_split(path, &manifest, Split::Test)?,
    };
    Ok((manifest, data))
}

/// Generates the dataset and writes `train/` and `test/` xyz files plus
/// `manifest.json` under `root`.
pub fn build_dataset(config: &DatasetConfig, root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let data = generate_dataset(config)?;
    let mut splits = Splits::default();
    for (split, clouds) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        let dir = root.join(split.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let per_class = clouds.len() / config.classes.len();
        let entries = match split {
            Split::Train => &mut splits.train,
            Split::Test => &mut splits.test,
        };
        for (i, cloud) in clouds.iter().enumerate() {
            let label = cloud.label().expect("generated clouds are labeled");
            let file = format!("{}/{}_{:04}.xyz", split.name(), data.classes[label], i % per_class);
            write_xyz(root.join(&file), cloud)?;
            entries.push(ManifestEntry {
                file,
                label,
                bg: config.background,
            });
        }
    }
    let manifest = DatasetManifest {
        root: root.display().to_string(),
        classes: data.classes,
        splits,
        seed: config.seed,
        version: MANIFEST_VERSION,
    };
    let path: PathBuf = root.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
