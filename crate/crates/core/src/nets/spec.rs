use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ContextRequest, GroupKind};

/// One layer of a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerOp {
    /// Farthest point sampling of `m` centers.
    Sample { m: usize },
    /// Neighborhoods around the sampled centers; columns carry relative xyz
    /// stacked over any existing features.
    Group { kind: GroupKind },
    /// Per-column MLP, ReLU between layers and none after the last.
    SharedMlp { widths: Vec<usize> },
    /// Density reweighting: a `1 → hidden → 1` perceptron on in-group KDE
    /// densities scales every grouped column.
    Arch1 { hidden: usize },
    /// Coordinate reweighting: a linear `3 → m` map of relative coordinates
    /// mixes the `k` grouped columns into `m` new ones.
    Arch2 { m: usize },
    /// Max over each group's columns.
    MaxAggregate,
    /// Multi-scale grouping: kNN at every scale, a separate MLP per scale,
    /// max per scale, features concatenated in scale order.
    Arch3 { scales: Vec<usize>, widths: Vec<usize> },
    /// Orientation encoding over the 2×2×2 octant cube of each point.
    Arch4 { radius: f64 },
    /// Max over all points.
    GlobalMax,
    /// All features (or coordinates) of all points as one vector.
    Flatten,
    /// Squared distances to the `k` nearest other points, nearest first.
    Distances { k: usize },
    Fc { out: usize, relu: bool },
    Softmax,
}

impl LayerOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerOp::Sample { .. } => "sample",
            LayerOp::Group { .. } => "group",
            LayerOp::SharedMlp { .. } => "shared_mlp",
            LayerOp::Arch1 { .. } => "arch1",
            LayerOp::Arch2 { .. } => "arch2",
            LayerOp::MaxAggregate => "max_aggregate",
            LayerOp::Arch3 { .. } => "arch3",
            LayerOp::Arch4 { .. } => "arch4",
            LayerOp::GlobalMax => "global_max",
            LayerOp::Flatten => "flatten",
            LayerOp::Distances { .. } => "distances",
            LayerOp::Fc { .. } => "fc",
            LayerOp::Softmax => "softmax",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Unique name; parameters live under `"{name}.…"`.
    pub name: String,
    #[serde(flatten)]
    pub op: LayerOp,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, op: LayerOp) -> Self {
        LayerSpec {
            name: name.into(),
            op,
        }
    }
}

/// A feed-forward point-cloud network over clouds of exactly `points` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub points: usize,
    pub layers: Vec<LayerSpec>,
    /// Name of the layer whose output is the diagnosed feature.
    pub tap: String,
}

/// What flows between layers during shape inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    /// `n` points, with `d` feature rows or only coordinates.
    Points { n: usize, d: Option<usize> },
    /// `m` centers sampled from `n` points that are not yet grouped.
    Sampled { n: usize, d: Option<usize>, m: usize },
    /// `m` groups of `g` columns with `d` rows. `geometric` is true while
    /// the columns still correspond to neighbor points.
    Grouped { m: usize, g: usize, d: usize, geometric: bool },
    Vector { d: usize },
}

/// Shapes of one layer's parameters, in path order.
pub type ParamShapes = Vec<(String, Vec<usize>)>;

/// Result of validating a spec: per-layer outputs and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecLayout {
    pub flows: Vec<Flow>,
    pub params: Vec<ParamShapes>,
    pub tap_index: usize,
    pub logits_index: usize,
    pub classes: usize,
}

fn mlp_params(prefix: &str, d_in: usize, widths: &[usize]) -> ParamShapes {
    let mut out = Vec::new();
    let mut prev = d_in;
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("{prefix}.w{i}"), vec![w, prev]));
        out.push((format!("{prefix}.b{i}"), vec![w]));
        prev = w;
    }
    out
}

/// Parameter path prefix of scale `t` of an arch3 layer named `name`.
pub fn arch3_scale_prefix(name: &str, t: usize) -> String {
    if t == 0 {
        name.to_string()
    } else {
        format!("{name}.s{t}")
    }
}

impl NetworkSpec {
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Checks the spec and infers every layer's output shape.
    pub fn layout(&self) -> Result<SpecLayout> {
        let err = |layer: usize, msg: String| Error::Spec { layer, msg };
        if self.points == 0 {
            return Err(err(0, "networks need at least one input point".into()));
        }
        if self.layers.is_empty() {
            return Err(err(0, "no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.name.is_empty() {
                return Err(err(i, "empty layer name".into()));
            }
            if self.layers[..i].iter().any(|p| p.name == l.name) {
                return Err(err(i, format!("duplicate layer name `{}`", l.name)));
            }
        }
        let tap_index = self
            .layer_index(&self.tap)
            .ok_or_else(|| err(0, format!("tap layer `{}` not found", self.tap)))?;
        if let Some(s) = self.layers.iter().position(|l| l.op == LayerOp::Softmax) {
            if s != self.layers.len() - 1 {
                return Err(err(s, "softmax must be the last layer".into()));
            }
            if tap_index >= s {
                return Err(err(tap_index, "the tap layer must precede softmax".into()));
            }
        }

        let mut flow = Flow::Points {
            n: self.points,
            d: None,
        };
        let mut flows = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let name = layer.name.as_str();
            let bad = |what: &str| err(i, format!("{} cannot follow {what}", layer.op.kind_name()));
            let mut p = ParamShapes::new();
            flow = match (&layer.op, flow) {
                (LayerOp::Sample { m }, Flow::Points { n, d }) => {
                    if *m == 0 || *m > n {
                        return Err(err(i, format!("cannot sample {m} of {n} points")));
                    }
                    Flow::Sampled { n, d, m: *m }
                }
                (LayerOp::Group { kind }, Flow::Points { n, d } | Flow::Sampled { n, d, .. }) => {
                    let m = match flow {
                        Flow::Sampled { m, .. } => m,
                        _ => n,
                    };
                    let k = kind.k();
                    if k == 0 || k > n {
                        return Err(err(i, format!("group of {k} from {n} points")));
                    }
                    if let GroupKind::Ball { radius, .. } = kind {
                        if !(*radius > 0.0) {
                            return Err(err(i, format!("ball radius {radius} must be > 0")));
                        }
                    }
                    Flow::Grouped {
                        m,
                        g: k,
                        d: 3 + d.unwrap_or(0),
                        geometric: true,
                    }
                }
                (LayerOp::SharedMlp { widths }, f) => {
                    if widths.is_empty() || widths.contains(&0) {
                        return Err(err(i, "shared MLP widths must be non-empty and positive".into()));
                    }
                    let last = *widths.last().expect("non-empty");
                    match f {
                        Flow::Grouped { m, g, d, geometric } => {
                            p = mlp_params(name, d, widths);
                            Flow::Grouped {
                                m,
                                g,
                                d: last,
                                geometric,
                            }
                        }
                        Flow::Points { n, d } => {
                            p = mlp_params(name, d.unwrap_or(3), widths);
                            Flow::Points { n, d: Some(last) }
                        }
                        Flow::Vector { d } => {
                            p = mlp_params(name, d, widths);
                            Flow::Vector { d: last }
                        }
                        Flow::Sampled { .. } => return Err(bad("an ungrouped sample")),
                    }
                }
                (LayerOp::Arch1 { hidden }, f @ Flow::Grouped { geometric, .. }) => {
                    if !geometric {
                        return Err(err(i, "arch1 needs neighbor columns (place it before arch2)".into()));
                    }
                    if *hidden == 0 {
                        return Err(err(i, "arch1 hidden width must be positive".into()));
                    }
                    p = vec![
                        (format!("{name}.w0"), vec![*hidden, 1]),
                        (format!("{name}.b0"), vec![*hidden]),
                        (format!("{name}.w1"), vec![1, *hidden]),
                        (format!("{name}.b1"), vec![1]),
                    ];
                    f
                }
                (LayerOp::Arch2 { m: mw }, Flow::Grouped { m, d, geometric, .. }) => {
                    if !geometric {
                        return Err(err(i, "arch2 needs neighbor columns".into()));
                    }
                    if *mw == 0 {
                        return Err(err(i, "arch2 width must be positive".into()));
                    }
                    p = vec![
                        (format!("{name}.w0"), vec![*mw, 3]),
                        (format!("{name}.b0"), vec![*mw]),
                    ];
                    Flow::Grouped {
                        m,
                        g: *mw,
                        d,
                        geometric: false,
                    }
                }
                (LayerOp::MaxAggregate, Flow::Grouped { m, d, .. }) => Flow::Points { n: m, d: Some(d) },
                (
                    LayerOp::Arch3 { scales, widths },
                    Flow::Points { n, d } | Flow::Sampled { n, d, .. },
                ) => {
                    let m = match flow {
                        Flow::Sampled { m, .. } => m,
                        _ => n,
                    };
                    if scales.is_empty() {
                        return Err(err(i, "arch3 needs at least one scale".into()));
                    }
                    let inc = scales.windows(2).all(|w| w[0] < w[1]);
                    let dec = scales.windows(2).all(|w| w[0] > w[1]);
                    if !(inc || dec) {
                        return Err(err(i, format!("arch3 scales {scales:?} must be strictly monotone")));
                    }
                    if let Some(&k) = scales.iter().find(|&&k| k == 0 || k > n) {
                        return Err(err(i, format!("scale {k} with {n} points")));
                    }
                    if widths.is_empty() || widths.contains(&0) {
                        return Err(err(i, "arch3 widths must be non-empty and positive".into()));
                    }
                    for t in 0..scales.len() {
                        p.extend(mlp_params(&arch3_scale_prefix(name, t), 3 + d.unwrap_or(0), widths));
                    }
                    Flow::Points {
                        n: m,
                        d: Some(scales.len() * widths.last().expect("non-empty")),
                    }
                }
                (LayerOp::Arch4 { radius }, Flow::Points { n, d }) => {
                    if !(*radius > 0.0) {
                        return Err(err(i, format!("arch4 radius {radius} must be > 0")));
                    }
                    let d = d.unwrap_or(3);
                    for axis in ["x", "y", "z"] {
                        p.push((format!("{name}.w{axis}"), vec![d, 2]));
                    }
                    for axis in ["x", "y", "z"] {
                        p.push((format!("{name}.b{axis}"), vec![d]));
                    }
                    Flow::Points { n, d: Some(d) }
                }
                (LayerOp::GlobalMax, Flow::Points { d, .. }) => Flow::Vector { d: d.unwrap_or(3) },
                (LayerOp::Flatten, Flow::Points { n, d }) => Flow::Vector {
                    d: n * d.unwrap_or(3),
                },
                (LayerOp::Distances { k }, Flow::Points { n, .. }) => {
                    if *k == 0 || *k >= n {
                        return Err(err(i, format!("{k} distances with {n} points")));
                    }
                    Flow::Points { n, d: Some(*k) }
                }
                (LayerOp::Fc { out, .. }, Flow::Vector { d }) => {
                    if *out == 0 {
                        return Err(err(i, "fc width must be positive".into()));
                    }
                    p = vec![
                        (format!("{name}.w0"), vec![*out, d]),
                        (format!("{name}.b0"), vec![*out]),
                    ];
                    Flow::Vector { d: *out }
                }
                (LayerOp::Softmax, f @ Flow::Vector { .. }) => f,
                (_, Flow::Points { .. }) => return Err(bad("a point level")),
                (_, Flow::Sampled { .. }) => return Err(bad("a sample")),
                (_, Flow::Grouped { .. }) => return Err(bad("a grouping")),
                (_, Flow::Vector { .. }) => return Err(bad("a vector")),
            };
            flows.push(flow);
            params.push(p);
        }

        let logits_index = match self.layers.last().map(|l| &l.op) {
            Some(LayerOp::Softmax) => self.layers.len() - 2,
            _ => self.layers.len() - 1,
        };
        let classes = match flows[logits_index] {
            Flow::Vector { d } => d,
            _ => return Err(err(logits_index, "the network must end in a vector of logits".into())),
        };
        Ok(SpecLayout {
            flows,
            params,
            tap_index,
            logits_index,
            classes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }

    /// The geometry each layer needs, for [`crate::geom::build_fixed_contexts`].
    pub fn context_requests(&self) -> Vec<ContextRequest> {
        self.layers
            .iter()
            .map(|l| match &l.op {
                LayerOp::Sample { m } => ContextRequest::Sample { m: *m },
                LayerOp::Group { kind } => ContextRequest::Group { kind: *kind },
                LayerOp::Arch3 { scales, .. } => ContextRequest::MultiScale {
                    scales: scales.clone(),
                },
                LayerOp::Arch4 { radius } => ContextRequest::Octant { radius: *radius },
                LayerOp::Distances { k } => ContextRequest::Neighbors { k: *k },
                LayerOp::MaxAggregate => ContextRequest::Pool,
                LayerOp::GlobalMax | LayerOp::Flatten => ContextRequest::GlobalPool,
                LayerOp::SharedMlp { .. }
                | LayerOp::Arch1 { .. }
                | LayerOp::Arch2 { .. }
                | LayerOp::Fc { .. }
                | LayerOp::Softmax => ContextRequest::None,
            })
            .collect()
    }
}
