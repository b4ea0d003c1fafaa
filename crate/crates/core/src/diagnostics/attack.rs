use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, Binder, Graph, Tensor};
use crate::error::{Error, Result};
use crate::geom::{points_to_tensor, ContextPlan, Point};
use crate::nets::{argmax, Classifier};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Outer bisection steps on the penalty weight `c`.
    pub c_steps: usize,
    pub c_lo: f64,
    pub c_hi: f64,
    pub c_init: f64,
    pub lr: f64,
    /// Adam steps per value of `c`.
    pub steps: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            c_steps: 9,
            c_lo: 1e-3,
            c_hi: 1e3,
            c_init: 1.0,
            lr: 0.01,
            steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target: usize,
    pub success: bool,
    /// `[3 × n]` row-major; zeros when the attack failed.
    pub perturbation: Vec<f64>,
    pub l2: f64,
    /// Adam steps taken over all values of `c`.
    pub iterations: usize,
}

/// Smallest perturbation found that makes the model predict `target`.
///
/// For each `c` of a log bisection, Adam minimizes
/// `‖ε‖² + c·max(0, max_{j≠t} z_j − z_t)` from `ε = 0`; every iterate that
/// classifies as the target is a candidate and the smallest one is kept.
/// A success shrinks `c`, a failure grows it. Contexts stay fixed by `plan`.
pub fn targeted_attack(
    model: &Classifier,
    points: &[Point],
    plan: &ContextPlan,
    target: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let classes = model.classes();
    if target >= classes {
        return Err(Error::Index(format!("target {target} with {classes} classes")));
    }
    let x0 = points_to_tensor(points);
    let predicted = argmax(&logits_at(model, &x0, plan, None)?);
    if predicted == target {
        return Err(Error::Contract(format!(
            "target {target} is already the predicted class"
        )));
    }
    if classes < 2 {
        return Err(Error::Count("attacks need at least two classes".into()));
    }
    let others: Vec<usize> = (0..classes).filter(|&j| j != target).collect();
    let numel = x0.numel();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let (mut lo, mut hi) = (config.c_lo, config.c_hi);
    let mut c = config.c_init.clamp(lo, hi);
    let mut iterations = 0;
    for _ in 0..config.c_steps {
        let mut eps = vec![0.0; numel];
        let mut adam = Adam::new(config.lr, numel);
        let mut succeeded = false;
        for _ in 0..config.steps {
            let g = Graph::new();
            let binder = Binder::new(model.params(), &g, false);
            let e = g.input(Tensor::matrix(3, numel / 3, eps.clone())?);
            let x = g.constant(x0.clone()).add(e)?;
            let z = model.forward(&binder, x, plan)?.logits;
            let zv = z.to_vec();
            if argmax(&zv) == target {
                succeeded = true;
                let norm_sq: f64 = eps.iter().map(|v| v * v).sum();
                if best.as_ref().is_none_or(|(b, _)| norm_sq < *b) {
                    best = Some((norm_sq, eps.clone()));
                }
            }
            let row = z.reshape(vec![1, classes])?;
            let rival = row.gather_cols(others.clone())?.reduce_max()?;
            let own = row.gather_cols(vec![target])?.reshape(vec![1])?;
            let hinge = rival.sub(own)?.relu().sum();
            let loss = e.square().sum().add(hinge.scale(c))?;
            let grad = g.backward(loss)?.tensor(e).into_data();
            adam.step(&mut eps, &grad);
            iterations += 1;
        }
        // the last update has not been scored yet
        if argmax(&logits_at(model, &x0, plan, Some(&eps))?) == target {
            succeeded = true;
            let norm_sq: f64 = eps.iter().map(|v| v * v).sum();
            if best.as_ref().is_none_or(|(b, _)| norm_sq < *b) {
                best = Some((norm_sq, eps.clone()));
            }
        }
        if succeeded {
            hi = c;
        } else {
            lo = c;
        }
        c = (lo * hi).sqrt();
    }

    match best {
        Some((_, eps)) if argmax(&logits_at(model, &x0, plan, Some(&eps))?) == target => {
            let l2 = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(AttackResult {
                target,
                success: true,
                perturbation: eps,
                l2,
                iterations,
            })
        }
        _ => Ok(AttackResult {
            target,
            success: false,
            perturbation: vec![0.0; numel],
            l2: 0.0,
            iterations,
        }),
    }
}

fn logits_at(model: &Classifier, x0: &Tensor, plan: &ContextPlan, eps: Option<&[f64]>) -> Result<Vec<f64>> {
    let data: Vec<f64> = match eps {
        Some(e) => x0.data().iter().zip(e).map(|(a, b)| a + b).collect(),
        None => x0.data().to_vec(),
    };
    let g = Graph::new();
    let binder = Binder::new(model.params(), &g, false);
    let x = g.constant(Tensor::matrix(3, x0.dims2().1, data)?);
    Ok(model.forward(&binder, x, plan)?.logits.to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialOutcome {
    pub predicted: usize,
    /// Mean `‖ε‖₂` over successful targets; `None` if none succeeded.
    pub mean_l2: Option<f64>,
    pub success_fraction: f64,
    pub attacks: Vec<AttackResult>,
}

impl AdversarialOutcome {
    /// The mean norm, or a reliability error when fewer than half the targets fell.
    pub fn reliable_mean(&self) -> Result<f64> {
        let successes = self.attacks.iter().filter(|a| a.success).count();
        match self.mean_l2 {
            Some(m) if self.success_fraction >= 0.5 => Ok(m),
            _ => Err(Error::Reliability {
                successes,
                attempts: self.attacks.len(),
            }),
        }
    }
}

/// Attacks every class other than the current prediction.
pub fn attack_all_targets(
    model: &Classifier,
    points: &[Point],
    plan: &ContextPlan,
    config: &AttackConfig,
) -> Result<AdversarialOutcome> {
    if model.classes() < 2 {
        return Err(Error::Count("attacks need at least two classes".into()));
    }
    let predicted = argmax(&model.logits_with(points, plan)?);
    let attacks = (0..model.classes())
        .filter(|&t| t != predicted)
        .map(|t| targeted_attack(model, points, plan, t, config))
        .collect::<Result<Vec<_>>>()?;
    let wins: Vec<f64> = attacks.iter().filter(|a| a.success).map(|a| a.l2).collect();
    Ok(AdversarialOutcome {
        predicted,
        mean_l2: (!wins.is_empty()).then(|| wins.iter().sum::<f64>() / wins.len() as f64),
        success_fraction: wins.len() as f64 / attacks.len() as f64,
        attacks,
    })
}

/// Mean minimal perturbation over all incorrect classes.
pub fn adversarial_robustness(
    model: &Classifier,
    points: &[Point],
    plan: &ContextPlan,
    config: &AttackConfig,
) -> Result<(f64, AdversarialOutcome)> {
    let outcome = attack_all_targets(model, points, plan, config)?;
    Ok((outcome.reliable_mean()?, outcome))
}
