use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient check of a scalar graph builder.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1e-8, |numeric_i|)`.
pub fn finite_difference_check<F>(build: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let coords: Vec<usize> = (0..input.numel()).collect();
    finite_difference_check_at(build, input, h, &coords)
}

/// Like [`finite_difference_check`] but only over the listed coordinates.
pub fn finite_difference_check_at<F>(build: F, input: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let x = graph.input(input.clone());
    let loss = build(&graph, x)?;
    let analytic = graph.backward(loss)?.tensor(x);

    let eval = |t: Tensor| -> Result<f64> {
        let g = Graph::new();
        let x = g.constant(t);
        let out = build(&g, x)?;
        if out.numel() != 1 {
            return Err(Error::Contract("gradient check needs a scalar output".into()));
        }
        Ok(out.item())
    };

    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
