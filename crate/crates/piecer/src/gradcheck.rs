//! Finite-difference verification of analytic gradients.
//!
//! For a deterministic scalar function `f` over a list of parameter tensors,
//! [`grad_check`] compares the tape's reverse-mode gradient against a central
//! difference `(f(x+h) - f(x-h)) / 2h` on sampled coordinates and reports the
//! worst relative error `|analytic - numeric| / max(1, |numeric|)`.

use crate::autodiff::{ComputeGraph, NodeId};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("gradient check failed while perturbing parameter {param}: {source}")]
    Evaluation { param: usize, source: TensorError },
    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
}

/// Coordinates sampled per parameter when the parameter is larger than this.
const SAMPLES_PER_PARAM: usize = 32;

fn eval_scalar<F>(f: &F, params: &[Tensor]) -> Result<f64, TensorError>
where
    F: Fn(&mut ComputeGraph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut graph = ComputeGraph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| graph.constant(p.clone())).collect();
    let loss = f(&mut graph, &ids)?;
    let t = graph.value(loss);
    if !t.is_scalar() {
        return Err(TensorError::Contract(format!("loss must be scalar, got {:?}", t.shape())));
    }
    Ok(t.item())
}

/// Maximum relative error between analytic and central-difference gradients.
///
/// At least [`SAMPLES_PER_PARAM`] coordinates are probed per parameter (all
/// of them when the parameter is smaller). `f` must be deterministic: any
/// internal randomness has to be pinned by its own seeds.
pub fn grad_check<F>(f: &F, params: &[Tensor], h: f64, seed: u64) -> Result<f64, CheckError>
where
    F: Fn(&mut ComputeGraph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    if h <= 0.0 {
        return Err(CheckError::BadStep(h));
    }
    // Analytic pass.
    let mut graph = ComputeGraph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|p| graph.input(p.clone().with_grad()))
        .collect();
    let loss = f(&mut graph, &ids).map_err(|source| CheckError::Evaluation { param: 0, source })?;
    if !graph.value(loss).is_scalar() {
        return Err(CheckError::NotScalar(graph.value(loss).shape().to_vec()));
    }
    graph
        .backward(loss)
        .map_err(|source| CheckError::Evaluation { param: 0, source })?;
    // A parameter with no path to the loss has gradient zero; the central
    // differences below confirm it.
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| graph.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for (pi, param) in params.iter().enumerate() {
        let n = param.len();
        let coords: Vec<usize> = if n <= SAMPLES_PER_PARAM {
            (0..n).collect()
        } else {
            let perm = rng.permutation(n);
            perm[..SAMPLES_PER_PARAM].to_vec()
        };
        for &c in &coords {
            let mut plus = params.to_vec();
            plus[pi].values_mut()[c] += h;
            let mut minus = params.to_vec();
            minus[pi].values_mut()[c] -= h;
            let fp = eval_scalar(f, &plus)
                .map_err(|source| CheckError::Evaluation { param: pi, source })?;
            let fm = eval_scalar(f, &minus)
                .map_err(|source| CheckError::Evaluation { param: pi, source })?;
            let numeric = (fp - fm) / (2.0 * h);
            let err = (analytic[pi][c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
