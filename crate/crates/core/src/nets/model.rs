use rand::Rng;

use super::spec::{arch3_scale_prefix, Flow, LayerOp, NetworkSpec, SpecLayout};
use crate::autograd::{concat_rows, Binder, Graph, ParameterSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{build_fixed_contexts, tensor_to_points, ContextPlan, NeighborhoodIndex, PlanStep, Point};
use crate::seeding;

/// Logits and the tapped feature of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Output<'g> {
    pub logits: Var<'g>,
    pub tap: Var<'g>,
}

/// A network spec together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    spec: NetworkSpec,
    layout: SpecLayout,
    params: ParameterSet,
}

/// State between layers inside a forward pass.
enum State<'g> {
    Points {
        pos: Var<'g>,
        feat: Option<Var<'g>>,
        centers: Option<Vec<usize>>,
    },
    Grouped {
        pos: Var<'g>,
        centers: Vec<usize>,
        rel: Option<Var<'g>>,
        feat: Var<'g>,
        g: usize,
        bandwidth: f64,
    },
    Vector(Var<'g>),
}

impl Classifier {
    /// Fresh parameters: He-uniform weights over the fan-in, zero biases,
    /// arch1's output bias at 1 and arch4's cube weights in `[0, 1]`.
    /// Every parameter draws from its own stream keyed by its path, so
    /// toggling a module never changes the initial values of the others.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let layout = spec.layout()?;
        let mut params = ParameterSet::new();
        for (layer, shapes) in spec.layers.iter().zip(&layout.params) {
            for (path, shape) in shapes {
                let n: usize = shape.iter().product();
                let mut rng = seeding::stream(seed, 0, path);
                let leaf = path.rsplit('.').next().unwrap_or("");
                let data: Vec<f64> = if let LayerOp::Arch4 { .. } = layer.op {
                    if leaf.starts_with('w') {
                        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
                    } else {
                        vec![0.0; n]
                    }
                } else if leaf.starts_with('b') {
                    let is_arch1_out = matches!(layer.op, LayerOp::Arch1 { .. }) && leaf == "b1";
                    vec![if is_arch1_out { 1.0 } else { 0.0 }; n]
                } else {
                    let fan_in = shape[1] as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                params.insert(path.clone(), Tensor::new(shape.clone(), data)?)?;
            }
        }
        Ok(Classifier { spec, layout, params })
    }

    /// Wraps existing parameters, checking names and shapes against the spec.
    pub fn from_parts(spec: NetworkSpec, params: ParameterSet) -> Result<Self> {
        let layout = spec.layout()?;
        let expected: Vec<(&String, &Vec<usize>)> =
            layout.params.iter().flatten().map(|(p, s)| (p, s)).collect();
        if expected.len() != params.len() {
            return Err(Error::Contract(format!(
                "spec expects {} parameter arrays, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (path, shape) in expected {
            let t = params
                .get(path)
                .ok_or_else(|| Error::Contract(format!("missing parameter `{path}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter `{path}` has shape {:?}, spec wants {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Classifier { spec, layout, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn classes(&self) -> usize {
        self.layout.classes
    }

    pub fn points(&self) -> usize {
        self.spec.points
    }

    /// Dimension of the tapped feature.
    pub fn tap_dim(&self) -> usize {
        match self.layout.flows[self.layout.tap_index] {
            Flow::Points { n, d } => n * d.unwrap_or(3),
            Flow::Sampled { n, d, .. } => n * d.unwrap_or(3),
            Flow::Grouped { m, g, d, .. } => m * g * d,
            Flow::Vector { d } => d,
        }
    }

    /// Freezes every sampling and neighborhood choice for `points`.
    pub fn plan(&self, points: &[Point]) -> Result<ContextPlan> {
        if points.len() != self.spec.points {
            return Err(Error::Dimension(format!(
                "network expects {} points, cloud has {}",
                self.spec.points,
                points.len()
            )));
        }
        build_fixed_contexts(points, &self.spec.context_requests())
    }

    /// Forward pass of `x` (`[3 × n]`) using frozen contexts.
    pub fn forward<'g>(&self, binder: &Binder<'_, 'g>, x: Var<'g>, plan: &ContextPlan) -> Result<Output<'g>> {
        let (rows, n) = x.dims2();
        if rows != 3 || n != self.spec.points {
            return Err(Error::Dimension(format!(
                "input {:?} for a network over [3, {}]",
                x.shape(),
                self.spec.points
            )));
        }
        if plan.n_points() != n || plan.steps().len() != self.spec.layers.len() {
            return Err(Error::Contract("context plan was built for a different network or cloud".into()));
        }
        let mut state = State::Points {
            pos: x,
            feat: None,
            centers: None,
        };
        let mut tap = None;
        let mut logits = None;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            state = self
                .apply(binder, i, &layer.name, &layer.op, plan.step(i), state)
                .map_err(|e| match e {
                    Error::Dimension(m) => Error::Dimension(format!("layer `{}`: {m}", layer.name)),
                    other => other,
                })?;
            let out = || {
                let v = match &state {
                    State::Points { feat, pos, .. } => feat.unwrap_or(*pos),
                    State::Grouped { feat, .. } => *feat,
                    State::Vector(v) => *v,
                };
                v.reshape(vec![v.numel()]).expect("numel preserved")
            };
            if i == self.layout.tap_index {
                tap = Some(out());
            }
            if i == self.layout.logits_index {
                logits = Some(out());
            }
        }
        Ok(Output {
            logits: logits.expect("validated"),
            tap: tap.expect("validated"),
        })
    }

    /// Forward pass with contexts planned on `x` itself.
    pub fn forward_unplanned<'g>(&self, binder: &Binder<'_, 'g>, x: Var<'g>) -> Result<Output<'g>> {
        let plan = self.plan(&tensor_to_points(&x.value())?)?;
        self.forward(binder, x, &plan)
    }

    /// Logits of a cloud under a plan built from it.
    pub fn logits(&self, points: &[Point]) -> Result<Vec<f64>> {
        let plan = self.plan(points)?;
        self.logits_with(points, &plan)
    }

    pub fn logits_with(&self, points: &[Point], plan: &ContextPlan) -> Result<Vec<f64>> {
        let g = Graph::new();
        let binder = Binder::new(&self.params, &g, false);
        let x = g.constant(crate::geom::points_to_tensor(points));
        Ok(self.forward(&binder, x, plan)?.logits.to_vec())
    }

    /// Predicted class: the arg-max of the logits.
    pub fn classify(&self, points: &[Point]) -> Result<usize> {
        Ok(argmax(&self.logits(points)?))
    }

    fn mlp<'g>(&self, binder: &Binder<'_, 'g>, prefix: &str, widths: usize, mut h: Var<'g>) -> Result<Var<'g>> {
        for i in 0..widths {
            let w = binder.get(&format!("{prefix}.w{i}"))?;
            let b = binder.get(&format!("{prefix}.b{i}"))?;
            h = w.matmul(h)?.add_column(b)?;
            if i + 1 < widths {
                h = h.relu();
            }
        }
        Ok(h)
    }

    fn group<'g>(
        pos: Var<'g>,
        feat: Option<Var<'g>>,
        nbr: &NeighborhoodIndex,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let rel = pos
            .gather_cols(nbr.flat().to_vec())?
            .sub(pos.gather_cols(nbr.centers_repeated())?)?;
        let grouped = match feat {
            Some(f) => concat_rows(&[rel, f.gather_cols(nbr.flat().to_vec())?])?,
            None => rel,
        };
        Ok((rel, grouped))
    }

    fn apply<'g>(
        &self,
        binder: &Binder<'_, 'g>,
        i: usize,
        name: &str,
        op: &LayerOp,
        step: &PlanStep,
        state: State<'g>,
    ) -> Result<State<'g>> {
        let mismatch = || Error::Contract(format!("context plan step {i} does not match layer `{name}`"));
        Ok(match (op, state) {
            (LayerOp::Sample { .. }, State::Points { pos, feat, .. }) => {
                let PlanStep::Sample { centers } = step else {
                    return Err(mismatch());
                };
                State::Points {
                    pos,
                    feat,
                    centers: Some(centers.clone()),
                }
            }
            (LayerOp::Group { .. }, State::Points { pos, feat, .. }) => {
                let PlanStep::Group { nbr, bandwidth } = step else {
                    return Err(mismatch());
                };
                let (rel, grouped) = Self::group(pos, feat, nbr)?;
                State::Grouped {
                    pos,
                    centers: nbr.centers().to_vec(),
                    rel: Some(rel),
                    feat: grouped,
                    g: nbr.k(),
                    bandwidth: *bandwidth,
                }
            }
            (LayerOp::SharedMlp { widths }, state) => {
                let run = |h| self.mlp(binder, name, widths.len(), h);
                match state {
                    State::Grouped {
                        pos,
                        centers,
                        rel,
                        feat,
                        g,
                        bandwidth,
                    } => State::Grouped {
                        pos,
                        centers,
                        rel,
                        feat: run(feat)?,
                        g,
                        bandwidth,
                    },
                    State::Points { pos, feat, centers } => State::Points {
                        pos,
                        feat: Some(run(feat.unwrap_or(pos))?),
                        centers,
                    },
                    State::Vector(v) => State::Vector(run(v)?.flatten()),
                }
            }
            (
                LayerOp::Arch1 { .. },
                State::Grouped {
                    pos,
                    centers,
                    rel: Some(rel),
                    feat,
                    g,
                    bandwidth,
                },
            ) => {
                let dens = rel.group_kde(g, bandwidth)?;
                let h = binder
                    .get(&format!("{name}.w0"))?
                    .matmul(dens)?
                    .add_column(binder.get(&format!("{name}.b0"))?)?
                    .relu();
                let w = binder
                    .get(&format!("{name}.w1"))?
                    .matmul(h)?
                    .add_column(binder.get(&format!("{name}.b1"))?)?;
                State::Grouped {
                    pos,
                    centers,
                    rel: Some(rel),
                    feat: feat.scale_columns(w)?,
                    g,
                    bandwidth,
                }
            }
            (
                LayerOp::Arch2 { m },
                State::Grouped {
                    pos,
                    centers,
                    rel: Some(rel),
                    feat,
                    g,
                    bandwidth,
                },
            ) => {
                let w = binder
                    .get(&format!("{name}.w0"))?
                    .matmul(rel)?
                    .add_column(binder.get(&format!("{name}.b0"))?)?;
                State::Grouped {
                    pos,
                    centers,
                    rel: None,
                    feat: feat.grouped_matmul_t(w, g)?,
                    g: *m,
                    bandwidth,
                }
            }
            (LayerOp::MaxAggregate, State::Grouped { pos, centers, feat, g, .. }) => State::Points {
                pos: pos.gather_cols(centers)?,
                feat: Some(feat.reduce_max_groups(g)?),
                centers: None,
            },
            (LayerOp::Arch3 { widths, .. }, State::Points { pos, feat, .. }) => {
                let PlanStep::MultiScale { nbrs, .. } = step else {
                    return Err(mismatch());
                };
                let mut parts = Vec::with_capacity(nbrs.len());
                for (t, nbr) in nbrs.iter().enumerate() {
                    let (_, grouped) = Self::group(pos, feat, nbr)?;
                    let h = self.mlp(binder, &arch3_scale_prefix(name, t), widths.len(), grouped)?;
                    parts.push(h.reduce_max_groups(nbr.k())?);
                }
                let centers = nbrs.first().map(|n| n.centers().to_vec()).unwrap_or_default();
                State::Points {
                    pos: pos.gather_cols(centers)?,
                    feat: Some(if parts.len() == 1 { parts[0] } else { concat_rows(&parts)? }),
                    centers: None,
                }
            }
            (LayerOp::Arch4 { .. }, State::Points { pos, feat, centers }) => {
                let PlanStep::Octant { nbr } = step else {
                    return Err(mismatch());
                };
                let cube = feat.unwrap_or(pos).gather_cols(nbr.flat().to_vec())?;
                let get = |s: &str| binder.get(&format!("{name}.{s}"));
                let out = cube.orientation_conv([get("wx")?, get("wy")?, get("wz")?], [get("bx")?, get("by")?, get("bz")?])?;
                State::Points {
                    pos,
                    feat: Some(out),
                    centers,
                }
            }
            (LayerOp::GlobalMax, State::Points { pos, feat, .. }) => State::Vector(feat.unwrap_or(pos).reduce_max()?),
            (LayerOp::Flatten, State::Points { pos, feat, .. }) => State::Vector(feat.unwrap_or(pos).flatten()),
            (LayerOp::Distances { k }, State::Points { pos, centers, .. }) => {
                let PlanStep::Neighbors { nbr } = step else {
                    return Err(mismatch());
                };
                let n = nbr.len();
                let rel = pos
                    .gather_cols(nbr.flat().to_vec())?
                    .sub(pos.gather_cols(nbr.centers_repeated())?)?;
                let d = rel.square().sum_rows().reshape(vec![n, *k])?.transpose();
                State::Points {
                    pos,
                    feat: Some(d),
                    centers,
                }
            }
            (LayerOp::Fc { relu, .. }, State::Vector(v)) => {
                let w = binder.get(&format!("{name}.w0"))?;
                let b = binder.get(&format!("{name}.b0"))?;
                let z = w.matmul(v.flatten())?.add_column(b)?;
                State::Vector(if *relu { z.relu() } else { z }.flatten())
            }
            (LayerOp::Softmax, s @ State::Vector(_)) => s,
            _ => return Err(Error::Spec {
                layer: i,
                msg: format!("`{name}` cannot be applied here"),
            }),
        })
    }
}

/// Index of the largest value; the lowest index among ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
