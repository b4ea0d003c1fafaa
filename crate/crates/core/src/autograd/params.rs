use std::cell::RefCell;
use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub trainable: bool,
    /// Accumulated gradient; `None` until a backward pass reaches it.
    pub grad: Option<Vec<f64>>,
}

/// Named parameters keyed by dot-separated path, iterated lexicographically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(Error::Contract(format!("duplicate parameter path `{path}`")));
        }
        self.params.insert(
            path,
            Parameter {
                value,
                trainable: true,
                grad: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.params.get_mut(path).map(|p| &mut p.value)
    }

    pub fn parameter(&self, path: &str) -> Option<&Parameter> {
        self.params.get(path)
    }

    pub fn set_trainable(&mut self, path: &str, trainable: bool) -> Result<()> {
        let p = self
            .params
            .get_mut(path)
            .ok_or_else(|| Error::Contract(format!("no parameter `{path}`")))?;
        p.trainable = trainable;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn accumulate(&mut self, path: &str, grad: &[f64]) -> Result<()> {
        let p = self
            .params
            .get_mut(path)
            .ok_or_else(|| Error::Contract(format!("no parameter `{path}`")))?;
        if grad.len() != p.value.numel() {
            return Err(Error::Dimension(format!(
                "gradient of {} values for `{path}` with {}",
                grad.len(),
                p.value.numel()
            )));
        }
        let buf = p.grad.get_or_insert_with(|| vec![0.0; grad.len()]);
        for (b, g) in buf.iter_mut().zip(grad) {
            *b += g;
        }
        Ok(())
    }
}

/// Lazily materializes parameters as leaves of one graph.
pub struct Binder<'p, 'g> {
    params: &'p ParameterSet,
    graph: &'g Graph,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Var<'g>>>,
}

impl<'p, 'g> Binder<'p, 'g> {
    /// `trainable = false` binds every parameter as a constant, which skips
    /// weight gradients entirely (diagnostics only need input gradients).
    pub fn new(params: &'p ParameterSet, graph: &'g Graph, trainable: bool) -> Self {
        Binder {
            params,
            graph,
            trainable,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn get(&self, path: &str) -> Result<Var<'g>> {
        if let Some(v) = self.bound.borrow().get(path) {
            return Ok(*v);
        }
        let p = self
            .params
            .parameter(path)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{path}`")))?;
        let var = self
            .graph
            .leaf(p.value.clone(), self.trainable && p.trainable);
        self.bound.borrow_mut().insert(path.to_string(), var);
        Ok(var)
    }

    /// Gradients of every bound parameter the backward pass reached.
    pub fn gradients(&self, grads: &Gradients) -> Vec<(String, Vec<f64>)> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(path, var)| grads.get(*var).map(|g| (path.clone(), g.to_vec())))
            .collect()
    }

    /// Adds this graph's parameter gradients into `target`.
    pub fn collect(&self, grads: &Gradients, target: &mut ParameterSet) -> Result<()> {
        for (path, var) in self.bound.borrow().iter() {
            if let Some(g) = grads.get(*var) {
                target.accumulate(path, g)?;
            }
        }
        Ok(())
    }
}
