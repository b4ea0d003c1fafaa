use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{argmax, Classifier};
use crate::autograd::{Binder, Graph, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::geom::{apply_rotation, points_to_tensor, random_rotation, PointCloud, RotationMode};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub lr: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub rotation: RotationMode,
    pub seed: u64,
}

fn default_batch() -> usize {
    16
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch.
    pub loss: f64,
    /// Accuracy on the (augmented) training samples, measured before each update.
    pub train_acc: f64,
    pub test_acc: f64,
}

fn label_of(cloud: &PointCloud, classes: usize) -> Result<usize> {
    let label = cloud
        .label()
        .ok_or_else(|| Error::Label("training cloud without a label".into()))?;
    if label >= classes {
        return Err(Error::Label(format!("label {label} with {classes} classes")));
    }
    Ok(label)
}

/// Fraction of `clouds` the model classifies correctly.
pub fn accuracy(model: &Classifier, clouds: &[PointCloud]) -> Result<f64> {
    if clouds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (i, c) in clouds.iter().enumerate() {
        let label = label_of(c, model.classes()).map_err(|e| e.at_sample(i))?;
        if model.classify(c.points())? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / clouds.len() as f64)
}

/// Mini-batch training with per-sample gradient accumulation.
///
/// Each epoch visits the training set in a seeded random order, rotating
/// every sample by a fresh draw of `config.rotation`. `on_epoch` sees each
/// log line as soon as the epoch ends, so callers can persist partial logs
/// before a divergence error.
pub fn train(
    model: &mut Classifier,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if train_set.is_empty() {
        return Err(Error::Count("empty training set".into()));
    }
    if config.batch == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    let classes = model.classes();
    for (i, c) in train_set.iter().chain(test_set).enumerate() {
        label_of(c, classes).map_err(|e| e.at_sample(i))?;
    }
    let mut opt = OptimizerState::new(config.optimizer, config.lr)?;
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seeding::stream(config.seed, epoch as u64, "shuffle"));
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch) {
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let cloud = &train_set[idx];
                let label = cloud.label().expect("checked");
                let mut rng = seeding::stream(config.seed, (epoch * train_set.len() + idx) as u64, "augment");
                let rotated = apply_rotation(cloud, &random_rotation(&mut rng, config.rotation))?;
                let plan = model.plan(rotated.points())?;
                let g = Graph::new();
                let binder = Binder::new(model.params(), &g, true);
                let x = g.constant(points_to_tensor(rotated.points()));
                let out = model.forward(&binder, x, &plan)?;
                let logits = out.logits.to_vec();
                if argmax(&logits) == label {
                    correct += 1;
                }
                let loss = out.logits.softmax_cross_entropy(label)?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, loss: value });
                }
                total_loss += value;
                let grads = g.backward(loss.scale(scale))?;
                let collected = binder.gradients(&grads);
                drop(binder);
                for (path, grad) in collected {
                    model.params_mut().accumulate(&path, &grad)?;
                }
            }
            opt.step(model.params_mut())?;
            if model.params().iter().any(|(_, p)| p.value.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        let log = EpochLog {
            epoch,
            loss: total_loss / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc: accuracy(model, test_set)?,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
