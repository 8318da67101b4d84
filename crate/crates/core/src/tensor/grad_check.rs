//! Finite-difference gradient verification.

use super::{Graph, NodeId, Tensor};
use crate::error::Result;

/// Checks the analytic gradient of a scalar-valued tensor function against
/// central finite differences at every coordinate of `point`.
///
/// `f` must build the loss node from the given leaf; it is re-invoked on a
/// fresh graph for every numeric evaluation. Returns the maximum over
/// coordinates of `|analytic − numeric| / max(1, |analytic|)`.
///
/// Non-differentiable points (relu at 0) must be excluded by the caller; the
/// central difference straddles the kink and reports a spurious error there.
pub fn grad_check<F>(f: &F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_coords(f, point, h, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates, for large parameter
/// vectors where full finite differencing is too slow.
pub fn grad_check_coords<F>(f: &F, point: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let analytic = analytic_grad(f, point)?;
    let mut worst: f64 = 0.0;
    for &c in coords {
        let numeric = central_difference(f, point, c, h)?;
        let a = analytic[c];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn analytic_grad<F>(f: &F, point: &Tensor) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let leaf = graph.leaf(point.clone().requires_grad(true));
    let loss = f(&mut graph, leaf)?;
    graph.backward(loss)?;
    Ok(graph
        .grad(leaf)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; point.numel()]))
}

fn central_difference<F>(f: &F, point: &Tensor, coord: usize, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let plus = eval_at(f, point, coord, h)?;
    let minus = eval_at(f, point, coord, -h)?;
    Ok((plus - minus) / (2.0 * h))
}

fn eval_at<F>(f: &F, point: &Tensor, coord: usize, delta: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut perturbed = point.clone().requires_grad(false);
    perturbed.values_mut()[coord] += delta;
    let mut graph = Graph::new();
    let leaf = graph.leaf(perturbed);
    let loss = f(&mut graph, leaf)?;
    Ok(graph.values(loss)[0])
}
