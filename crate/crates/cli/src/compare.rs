use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use pcdiag_core::diagnostics::{diagnose, DiagnosisReport, Metric};
use pcdiag_core::geom::RotationMode;
use pcdiag_core::nets::{ArchToggles, EpochLog};
use serde::{Deserialize, Serialize};

use crate::commands::{cloud_size, diagnosis_samples, load_data, log_path, to_json, train_variant, write_file};
use crate::config::{ExperimentConfig, Study, TrainingSection};
use crate::error::{CliError, CliResult};

/// The change in utility brought by a module, signed so that Δ > 0 means
/// the module helped: with − without for robustness-like metrics, without −
/// with for non-robustness and inconsistency.
pub fn delta(metric: Metric, with: f64, without: f64) -> f64 {
    match metric {
        Metric::Rotation | Metric::Neighborhood => without - with,
        Metric::Adversarial | Metric::Concentration | Metric::Discarding => with - without,
    }
}

/// A published value pair, shown for context only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaperRef {
    pub network: String,
    pub dataset: String,
    pub with: f64,
    pub without: f64,
    pub delta: f64,
}

/// ModelNet40 values of the reference study for `arch` and `metric`.
pub fn paper_reference(arch: u8, metric: Metric) -> Option<PaperRef> {
    let (network, with, without, delta) = match (arch, metric) {
        (1, Metric::Adversarial) => ("PointConv", 2.878, 2.629, 0.249),
        (2, Metric::Rotation) => ("PointConv", 4.875, 5.066, 0.191),
        (3, Metric::Adversarial) => ("Point2Sequence (4 vs 3 scales)", 2.526, 2.521, 0.005),
        (3, Metric::Neighborhood) => ("Point2Sequence (4 vs 3 scales)", 3.184, 3.332, 0.148),
        (4, Metric::Rotation) => ("PointSIFT", 3.931, 7.274, 3.343),
        _ => return None,
    };
    Some(PaperRef {
        network: network.into(),
        dataset: "ModelNet40".into(),
        with,
        without,
        delta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub study: String,
    pub metric: String,
    pub with: f64,
    pub without: f64,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paper: Option<PaperRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub toggles: ArchToggles,
    pub rotation: RotationMode,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub variants: Vec<VariantSummary>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let paper = self.rows.iter().any(|r| r.paper.is_some());
        let mut out = String::from("study,metric,with,without,delta");
        if paper {
            out += ",paper_network,paper_with,paper_without,paper_delta";
        }
        out.push('\n');
        for r in &self.rows {
            out += &format!("{},{},{},{},{}", r.study, r.metric, r.with, r.without, r.delta);
            if paper {
                match &r.paper {
                    Some(p) => out += &format!(",{},{},{},{}", p.network, p.with, p.without, p.delta),
                    None => out += ",,,,",
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone)]
struct Variant {
    name: String,
    toggles: ArchToggles,
    rotation: RotationMode,
    metrics: BTreeSet<Metric>,
}

fn toggles_name(t: &ArchToggles) -> String {
    let on: Vec<&str> = [
        (t.arch1.is_some(), "arch1"),
        (t.arch2.is_some(), "arch2"),
        (t.arch3.is_some(), "arch3"),
        (t.arch4.is_some(), "arch4"),
    ]
    .into_iter()
    .filter_map(|(on, n)| on.then_some(n))
    .collect();
    if on.is_empty() {
        "base".into()
    } else {
        on.join("+")
    }
}

fn rotation_suffix(mode: RotationMode) -> &'static str {
    match mode {
        RotationMode::None => "",
        RotationMode::ZAxis => "-z",
        RotationMode::So3 => "-so3",
    }
}

/// Toggles with `study.arch` switched on, using the model section's
/// placement when it has one.
fn with_module(config: &ExperimentConfig, study: &Study) -> CliResult<ArchToggles> {
    let mut t = config.model.toggles();
    let default = ArchToggles::only(study.arch)?;
    match study.arch {
        1 => t.arch1 = t.arch1.or(default.arch1),
        2 => t.arch2 = t.arch2.or(default.arch2),
        3 => t.arch3 = t.arch3.or(default.arch3),
        _ => t.arch4 = t.arch4.or(default.arch4),
    }
    Ok(t)
}

/// Trains the with- and without- variant of every study from the same seed
/// and data, diagnoses both on the same test clouds and tabulates Δ.
/// Variants shared between studies are trained once. Everything lands under
/// `out`: `comparison.{json,csv}` and `variants/<name>/`.
pub fn cmd_compare(config: &ExperimentConfig, out: &Path, paper_refs: bool) -> CliResult<ComparisonTable> {
    if config.studies.is_empty() {
        return Err(CliError::config("`compare` needs at least one entry in `studies`"));
    }
    let data = load_data(config)?;
    let points = cloud_size(&data)?;
    let classes = data.classes.len();

    let mut variants: Vec<Variant> = Vec::new();
    let mut pairs = Vec::new();
    for study in &config.studies {
        let rotation = study.rotation.unwrap_or(config.training.rotation);
        let with = with_module(config, study)?;
        let without = with.without(study.arch);
        let mut slot = |toggles: ArchToggles| {
            let name = format!("{}{}", toggles_name(&toggles), rotation_suffix(rotation));
            let i = match variants.iter().position(|v| v.toggles == toggles && v.rotation == rotation) {
                Some(i) => i,
                None => {
                    variants.push(Variant {
                        name,
                        toggles,
                        rotation,
                        metrics: BTreeSet::new(),
                    });
                    variants.len() - 1
                }
            };
            variants[i].metrics.extend(study.metrics());
            i
        };
        pairs.push((study, slot(with), slot(without)));
    }

    let samples = diagnosis_samples(&data, config.diagnosis.samples);
    let diagnosis = config.diagnosis.diagnosis_config();
    let mut reports: Vec<DiagnosisReport> = Vec::new();
    let mut summaries = Vec::new();
    for v in &variants {
        let dir = out.join("variants").join(&v.name);
        let spec = config
            .model
            .network(points, classes, &v.toggles)
            .map_err(|e| annotate(e, &v.name))?;
        let training = TrainingSection {
            rotation: v.rotation,
            ..config.training.clone()
        };
        let (model, log) = train_variant(spec, &v.toggles, &data, &training, config.seed, &dir.join("model.pcdg"))
            .map_err(|e| annotate(e, &v.name))?;
        let last: Option<&EpochLog> = log.last();
        summaries.push(VariantSummary {
            name: v.name.clone(),
            toggles: v.toggles.clone(),
            rotation: v.rotation,
            final_train_acc: last.map_or(0.0, |e| e.train_acc),
            final_test_acc: last.map_or(0.0, |e| e.test_acc),
            epochs: log.len(),
        });
        let report = diagnose(&model, &v.name, &samples, &v.metrics, &diagnosis, config.seed)
            .map_err(|e| CliError::within(format!("variant {}", v.name), e))?;
        write_file(&dir.join("report.json"), report.to_json()?)?;
        write_file(&dir.join("report.csv"), report.to_csv())?;
        reports.push(report);
    }

    let mut rows = Vec::new();
    for (study, w, wo) in pairs {
        for metric in study.metrics() {
            let value = |i: usize| {
                reports[i].metrics.get(metric).ok_or_else(|| {
                    CliError::config(format!("variant {} has no {} value", variants[i].name, metric.name()))
                })
            };
            let (with, without) = (value(w)?, value(wo)?);
            rows.push(ComparisonRow {
                study: study.name(),
                metric: metric.report_name().into(),
                with,
                without,
                delta: delta(metric, with, without),
                paper: if paper_refs { paper_reference(study.arch, metric) } else { None },
            });
        }
    }
    let table = ComparisonTable {
        seed: config.seed,
        rows,
        variants: summaries,
    };
    write_file(&out.join("comparison.json"), to_json(&table)?)?;
    write_file(&out.join("comparison.csv"), table.to_csv())?;
    Ok(table)
}

fn annotate(e: CliError, variant: &str) -> CliError {
    match e {
        CliError::Config(m) => CliError::config(format!("variant {variant}: {m}")),
        CliError::Core { context, source } => {
            let inner = context.trim_end_matches(": ");
            let sep = if inner.is_empty() { "" } else { ", " };
            CliError::within(format!("variant {variant}{sep}{inner}"), source)
        }
    }
}

/// Per-variant training logs, keyed by variant name, for callers that want
/// to inspect accuracy after a comparison.
pub fn variant_logs(out: &Path, table: &ComparisonTable) -> BTreeMap<String, std::path::PathBuf> {
    table
        .variants
        .iter()
        .map(|v| (v.name.clone(), log_path(&out.join("variants").join(&v.name).join("model.pcdg"))))
        .collect()
}
