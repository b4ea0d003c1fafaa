use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pcdiag_core::data::{build_dataset, generate_dataset, Dataset, DatasetManifest, MANIFEST_FILE};
use pcdiag_core::diagnostics::{attack_all_targets, diagnose, targeted_attack, DiagnosisReport, Metric};
use pcdiag_core::geom::PointCloud;
use pcdiag_core::nets::{accuracy, train, ArchToggles, Checkpoint, Classifier, EpochLog, NetworkSpec};
use pcdiag_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::{parse_metric_list, DiagnosisSection, ExperimentConfig, TrainingSection};
use crate::error::{CliError, CliResult};

pub const LOG_HEADER: &str = "epoch,loss,train_acc,test_acc";

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

/// Reads a dataset from its manifest or from the directory holding it.
pub fn load_dataset(path: &Path) -> CliResult<(DatasetManifest, Dataset)> {
    let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    Ok(pcdiag_core::data::load_dataset(&manifest)?)
}

/// Loads the manifest named by the config, or generates the data in memory.
pub fn load_data(config: &ExperimentConfig) -> CliResult<Dataset> {
    match &config.dataset.manifest {
        Some(path) => Ok(load_dataset(path)?.1),
        None => Ok(generate_dataset(&config.dataset.generation(config.seed))?),
    }
}

/// Points per cloud, which every cloud of the data must share.
pub fn cloud_size(data: &Dataset) -> CliResult<usize> {
    let mut sizes = data.train.iter().chain(&data.test).map(PointCloud::len);
    let first = sizes.next().ok_or_else(|| CliError::config("the dataset has no clouds"))?;
    if sizes.any(|n| n != first) {
        return Err(CliError::config("clouds of different sizes; the networks need a fixed point count"));
    }
    Ok(first)
}

/// Indices of up to `count` clouds among those passing `keep`, taken
/// round-robin over the labels, each label's clouds in file order.
pub fn select_samples(clouds: &[PointCloud], classes: usize, count: usize, keep: impl Fn(&PointCloud) -> bool) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes.max(1)];
    for (i, c) in clouds.iter().enumerate().filter(|(_, c)| keep(c)) {
        by_class[c.label().unwrap_or(0).min(classes.saturating_sub(1))].push(i);
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count && by_class.iter().any(|v| v.len() > round) {
        for v in &by_class {
            if let Some(&i) = v.get(round).filter(|_| out.len() < count) {
                out.push(i);
            }
        }
        round += 1;
    }
    out
}

/// The selected test clouds, in selection order.
pub fn diagnosis_samples(data: &Dataset, count: usize) -> Vec<PointCloud> {
    select_samples(&data.test, data.classes.len(), count, |_| true)
        .into_iter()
        .map(|i| data.test[i].clone())
        .collect()
}

pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> CliResult<DatasetManifest> {
    if config.dataset.manifest.is_some() {
        return Err(CliError::config("`gen` generates data; remove `dataset.manifest`"));
    }
    Ok(build_dataset(&config.dataset.generation(config.seed), out)?)
}

/// Where the training log of a checkpoint goes: `model.pcdg` → `model.log.csv`.
pub fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub training: TrainingSection,
    pub toggles: ArchToggles,
    pub log: Vec<EpochLog>,
}

/// Trains `spec` and writes the checkpoint to `ckpt` and the epoch log next
/// to it. The log is flushed after every epoch, so it survives a divergence.
pub fn train_variant(
    spec: NetworkSpec,
    toggles: &ArchToggles,
    data: &Dataset,
    training: &TrainingSection,
    seed: u64,
    ckpt: &Path,
) -> CliResult<(Classifier, Vec<EpochLog>)> {
    let mut model = Classifier::new(spec, seed)?;
    let log = log_path(ckpt);
    if let Some(dir) = log.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(&log).map_err(|e| Error::io(&log, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{LOG_HEADER}").and_then(|_| w.flush()).map_err(|e| Error::io(&log, e))?;
    let mut write_err = None;
    let result = train(&mut model, &data.train, &data.test, &training.train_config(seed), |e| {
        let line = writeln!(w, "{},{},{},{}", e.epoch, e.loss, e.train_acc, e.test_acc).and_then(|_| w.flush());
        if let Err(err) = line {
            write_err.get_or_insert(err);
        }
    });
    if let Some(err) = write_err {
        return Err(Error::io(&log, err).into());
    }
    let epochs = result?;
    let record = TrainingRecord {
        training: training.clone(),
        toggles: toggles.clone(),
        log: epochs.clone(),
    };
    let value = serde_json::to_value(&record).map_err(Error::from)?;
    let checkpoint = Checkpoint::new(model, value, seed);
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint.save(ckpt)?;
    Ok((checkpoint.model, epochs))
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> CliResult<Vec<EpochLog>> {
    let data = load_data(config)?;
    let points = cloud_size(&data)?;
    let toggles = config.model.toggles();
    let spec = config.model.network(points, data.classes.len(), &toggles)?;
    Ok(train_variant(spec, &toggles, &data, &config.training, config.seed, out)?.1)
}

fn model_id(ckpt: &Path) -> String {
    ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn check_classes(model: &Classifier, manifest: &DatasetManifest) -> CliResult<()> {
    if model.classes() != manifest.classes.len() {
        return Err(CliError::config(format!(
            "model has {} classes, data has {}",
            model.classes(),
            manifest.classes.len()
        )));
    }
    Ok(())
}

pub struct DiagnoseArgs<'a> {
    pub ckpt: &'a Path,
    pub data: &'a Path,
    pub metrics: &'a str,
    pub out: &'a Path,
    pub section: DiagnosisSection,
    pub seed: Option<u64>,
}

/// Diagnoses test clouds of the manifest; writes `out` (JSON) and the same
/// path with a `.csv` extension.
pub fn cmd_diagnose(args: DiagnoseArgs<'_>) -> CliResult<DiagnosisReport> {
    let metrics = parse_metric_list(args.metrics)?;
    let checkpoint = Checkpoint::load(args.ckpt)?;
    let (manifest, data) = load_dataset(args.data)?;
    check_classes(&checkpoint.model, &manifest)?;
    let samples = diagnosis_samples(&data, args.section.samples);
    if metrics.contains(&Metric::Concentration) && samples.iter().any(|c| c.mask().is_none()) {
        return Err(CliError::config(
            "the concentration metric needs foreground masks; generate the data with `background: true`",
        ));
    }
    let seed = args.seed.unwrap_or(checkpoint.seed);
    let report = diagnose(
        &checkpoint.model,
        &model_id(args.ckpt),
        &samples,
        &metrics,
        &args.section.diagnosis_config(),
        seed,
    )?;
    write_file(args.out, report.to_json()?)?;
    write_file(&args.out.with_extension("csv"), report.to_csv())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    /// Index into the test split.
    pub sample: usize,
    pub label: usize,
    pub predicted: usize,
    pub target: usize,
    pub success: bool,
    pub l2: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub model_id: String,
    pub target: String,
    pub rows: Vec<AttackRow>,
    /// Samples already predicted as the requested target.
    pub skipped: Vec<usize>,
    pub success_fraction: f64,
    pub mean_l2: Option<f64>,
}

impl AttackReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,label,predicted,target,success,l2,iterations\n");
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                r.sample, r.label, r.predicted, r.target, r.success, r.l2, r.iterations
            );
        }
        out
    }
}

pub struct AttackArgs<'a> {
    pub ckpt: &'a Path,
    pub data: &'a Path,
    /// A class index, a class name, or `all`.
    pub target: &'a str,
    pub out: &'a Path,
    pub section: DiagnosisSection,
    /// Attack this test cloud only (index into the test split).
    pub sample: Option<usize>,
}

/// Targeted attacks on test clouds. The report is written before a low
/// success fraction turns into a reliability error.
pub fn cmd_attack(args: AttackArgs<'_>) -> CliResult<AttackReport> {
    let checkpoint = Checkpoint::load(args.ckpt)?;
    let (manifest, data) = load_dataset(args.data)?;
    check_classes(&checkpoint.model, &manifest)?;
    let model = &checkpoint.model;
    let target = match args.target {
        "all" => None,
        t => Some(
            t.parse::<usize>()
                .ok()
                .or_else(|| manifest.classes.iter().position(|c| c == t))
                .filter(|&i| i < model.classes())
                .ok_or_else(|| CliError::config(format!("unknown target class `{t}`")))?,
        ),
    };
    let indices = match args.sample {
        Some(i) => {
            let cloud = data
                .test
                .get(i)
                .ok_or_else(|| CliError::config(format!("test split has {} clouds, no sample {i}", data.test.len())))?;
            if target.is_some() && cloud.label() == target {
                return Err(CliError::config(format!(
                    "target {} is the true class of sample {i}; attacks aim at incorrect labels",
                    args.target
                )));
            }
            vec![i]
        }
        // a fixed target is only attacked from clouds of other classes
        None => select_samples(&data.test, data.classes.len(), args.section.samples, |c| {
            target.is_none() || c.label() != target
        }),
    };
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for i in indices {
        let cloud = &data.test[i];
        let plan = model.plan(cloud.points()).map_err(|e| e.at_sample(i))?;
        let label = cloud.label().unwrap_or(0);
        let predicted = model.classify(cloud.points())?;
        let results = match target {
            None => attack_all_targets(model, cloud.points(), &plan, &args.section.attack)
                .map_err(|e| e.at_sample(i))?
                .attacks,
            Some(t) if t == predicted => {
                skipped.push(i);
                continue;
            }
            Some(t) => vec![targeted_attack(model, cloud.points(), &plan, t, &args.section.attack).map_err(|e| e.at_sample(i))?],
        };
        rows.extend(results.into_iter().map(|a| AttackRow {
            sample: i,
            label,
            predicted,
            target: a.target,
            success: a.success,
            l2: a.l2,
            iterations: a.iterations,
        }));
    }
    let wins: Vec<f64> = rows.iter().filter(|r| r.success).map(|r| r.l2).collect();
    let report = AttackReport {
        model_id: model_id(args.ckpt),
        target: args.target.to_string(),
        success_fraction: if rows.is_empty() { 0.0 } else { wins.len() as f64 / rows.len() as f64 },
        mean_l2: (!wins.is_empty()).then(|| wins.iter().sum::<f64>() / wins.len() as f64),
        rows,
        skipped,
    };
    write_file(args.out, to_json(&report)?)?;
    write_file(&args.out.with_extension("csv"), report.to_csv())?;
    if !report.rows.is_empty() && report.success_fraction < 0.5 {
        return Err(Error::Reliability {
            successes: wins.len(),
            attempts: report.rows.len(),
        }
        .into());
    }
    Ok(report)
}

/// Test accuracy of a checkpoint on a manifest's test split.
pub fn test_accuracy(ckpt: &Path, data: &Path) -> CliResult<f64> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let (_, data) = load_dataset(data)?;
    Ok(accuracy(&checkpoint.model, &data.test)?)
}
