use serde::{Deserialize, Serialize};

use super::spec::{LayerOp, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::geom::GroupKind;

/// One set-abstraction block: sample, group, shared MLP, max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaBlock {
    pub sample: usize,
    pub k: usize,
    pub widths: Vec<usize>,
}

/// Shape of the desk-scale baseline classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub points: usize,
    pub classes: usize,
    pub blocks: Vec<SaBlock>,
    /// Width of the tapped fully connected layer.
    pub fc_hidden: usize,
}

impl DeskConfig {
    /// Two blocks (128 centers × 32 neighbors, then 32 × 16), global max,
    /// a 64-unit tapped layer and the class layer.
    pub fn baseline(points: usize, classes: usize) -> Self {
        DeskConfig {
            points,
            classes,
            blocks: vec![
                SaBlock {
                    sample: 128,
                    k: 32,
                    widths: vec![32, 32, 64],
                },
                SaBlock {
                    sample: 32,
                    k: 16,
                    widths: vec![64, 64, 128],
                },
            ],
            fc_hidden: 64,
        }
    }
}

/// Blocks are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch1Placement {
    pub blocks: Vec<usize>,
    #[serde(default = "default_arch1_hidden")]
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch2Placement {
    pub blocks: Vec<usize>,
    #[serde(default = "default_arch2_width")]
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch3Placement {
    pub blocks: Vec<usize>,
    pub scales: Vec<usize>,
}

/// arch4 is inserted in front of each listed block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch4Placement {
    pub blocks: Vec<usize>,
    pub radius: f64,
}

fn default_arch1_hidden() -> usize {
    16
}

fn default_arch2_width() -> usize {
    32
}

/// Which architecture modules are switched on, and where.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchToggles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch1: Option<Arch1Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch2: Option<Arch2Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch3: Option<Arch3Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch4: Option<Arch4Placement>,
}

impl ArchToggles {
    pub fn none() -> Self {
        Self::default()
    }

    /// Default placements: arch1 and arch2 in both blocks, arch3 at block 1
    /// with scales {32, 16}, arch4 in front of block 2.
    pub fn only(arch: u8) -> Result<Self> {
        let mut t = Self::default();
        match arch {
            1 => {
                t.arch1 = Some(Arch1Placement {
                    blocks: vec![1, 2],
                    hidden: 16,
                })
            }
            2 => {
                t.arch2 = Some(Arch2Placement {
                    blocks: vec![1, 2],
                    m: 32,
                })
            }
            3 => {
                t.arch3 = Some(Arch3Placement {
                    blocks: vec![1],
                    scales: vec![32, 16],
                })
            }
            4 => {
                t.arch4 = Some(Arch4Placement {
                    blocks: vec![2],
                    radius: 0.35,
                })
            }
            other => return Err(Error::Contract(format!("no architecture {other}"))),
        }
        Ok(t)
    }

    /// A copy with architecture `arch` switched off.
    pub fn without(&self, arch: u8) -> Self {
        let mut t = self.clone();
        match arch {
            1 => t.arch1 = None,
            2 => t.arch2 = None,
            3 => t.arch3 = None,
            4 => t.arch4 = None,
            _ => {}
        }
        t
    }
}

/// Builds the desk-scale classifier with the toggled modules in place.
///
/// Layer names are stable across toggles: block `b` uses `sa{b}.sample`,
/// `sa{b}.group`, `sa{b}` for its MLP, `sa{b}.max`, and modules add
/// `sa{b}.arch1`, `sa{b}.arch2`, `sa{b}.arch4`. arch3 takes over the group,
/// MLP and max of its block under the MLP's name, so its first scale shares the
/// MLP's parameter paths.
pub fn desk_network(cfg: &DeskConfig, toggles: &ArchToggles) -> Result<NetworkSpec> {
    let nb = cfg.blocks.len();
    let check = |what: &str, blocks: &[usize]| -> Result<()> {
        match blocks.iter().find(|&&b| b == 0 || b > nb) {
            Some(b) => Err(Error::Contract(format!(
                "{what} placed at block {b}, but blocks are 1..={nb}"
            ))),
            None => Ok(()),
        }
    };
    let on = |blocks: Option<&Vec<usize>>, b: usize| blocks.is_some_and(|v| v.contains(&b));
    if let Some(a) = &toggles.arch1 {
        check("arch1", &a.blocks)?;
    }
    if let Some(a) = &toggles.arch2 {
        check("arch2", &a.blocks)?;
    }
    if let Some(a) = &toggles.arch3 {
        check("arch3", &a.blocks)?;
    }
    if let Some(a) = &toggles.arch4 {
        check("arch4", &a.blocks)?;
    }

    let mut layers = Vec::new();
    for (bi, block) in cfg.blocks.iter().enumerate() {
        let b = bi + 1;
        let name = format!("sa{b}");
        if let Some(a4) = toggles.arch4.as_ref().filter(|a| a.blocks.contains(&b)) {
            layers.push(LayerSpec::new(
                format!("{name}.arch4"),
                LayerOp::Arch4 { radius: a4.radius },
            ));
        }
        layers.push(LayerSpec::new(
            format!("{name}.sample"),
            LayerOp::Sample { m: block.sample },
        ));
        if let Some(a3) = toggles.arch3.as_ref().filter(|a| a.blocks.contains(&b)) {
            layers.push(LayerSpec::new(
                name.clone(),
                LayerOp::Arch3 {
                    scales: a3.scales.clone(),
                    widths: block.widths.clone(),
                },
            ));
            continue;
        }
        layers.push(LayerSpec::new(
            format!("{name}.group"),
            LayerOp::Group {
                kind: GroupKind::Knn { k: block.k },
            },
        ));
        layers.push(LayerSpec::new(
            name.clone(),
            LayerOp::SharedMlp {
                widths: block.widths.clone(),
            },
        ));
        if on(toggles.arch1.as_ref().map(|a| &a.blocks), b) {
            let hidden = toggles.arch1.as_ref().map_or(16, |a| a.hidden);
            layers.push(LayerSpec::new(format!("{name}.arch1"), LayerOp::Arch1 { hidden }));
        }
        if on(toggles.arch2.as_ref().map(|a| &a.blocks), b) {
            let m = toggles.arch2.as_ref().map_or(32, |a| a.m);
            layers.push(LayerSpec::new(format!("{name}.arch2"), LayerOp::Arch2 { m }));
        }
        layers.push(LayerSpec::new(format!("{name}.max"), LayerOp::MaxAggregate));
    }
    layers.push(LayerSpec::new("pool", LayerOp::GlobalMax));
    layers.push(LayerSpec::new(
        "fc1",
        LayerOp::Fc {
            out: cfg.fc_hidden,
            relu: true,
        },
    ));
    layers.push(LayerSpec::new(
        "fc2",
        LayerOp::Fc {
            out: cfg.classes,
            relu: false,
        },
    ));
    layers.push(LayerSpec::new("softmax", LayerOp::Softmax));
    let spec = NetworkSpec {
        points: cfg.points,
        layers,
        tap: "fc1".into(),
    };
    spec.validate()?;
    Ok(spec)
}

/// `z = W · flatten(X) + b` over `points` points: the linear control model.
pub fn linear_network(points: usize, classes: usize) -> NetworkSpec {
    NetworkSpec {
        points,
        layers: vec![
            LayerSpec::new("flat", LayerOp::Flatten),
            LayerSpec::new(
                "linear",
                LayerOp::Fc {
                    out: classes,
                    relu: false,
                },
            ),
        ],
        tap: "linear".into(),
    }
}

/// `h(X) = flatten(X)`: the identity featurizer.
pub fn identity_network(points: usize) -> NetworkSpec {
    NetworkSpec {
        points,
        layers: vec![LayerSpec::new("flat", LayerOp::Flatten)],
        tap: "flat".into(),
    }
}

/// Per-point MLP then global max, over either raw coordinates or the
/// squared distances to each point's `k` nearest neighbors. With
/// `distances = Some(k)` every feature depends on pairwise distances only,
/// so the network is exactly rotation invariant.
pub fn pointwise_network(points: usize, distances: Option<usize>, widths: &[usize], classes: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    if let Some(k) = distances {
        layers.push(LayerSpec::new("dist", LayerOp::Distances { k }));
    }
    layers.push(LayerSpec::new(
        "mlp",
        LayerOp::SharedMlp {
            widths: widths.to_vec(),
        },
    ));
    layers.push(LayerSpec::new("pool", LayerOp::GlobalMax));
    layers.push(LayerSpec::new(
        "fc",
        LayerOp::Fc {
            out: classes,
            relu: false,
        },
    ));
    NetworkSpec {
        points,
        layers,
        tap: "pool".into(),
    }
}
