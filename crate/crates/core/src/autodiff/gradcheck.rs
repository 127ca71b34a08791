//! Central finite-difference verification of analytic gradients.

use super::params::ParamStore;
use super::tensor::Tensor;
use super::{Graph, NodeId};
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn coords(len: usize, max_coords: usize) -> Vec<usize> {
    if len <= max_coords {
        (0..len).collect()
    } else {
        (0..max_coords).map(|i| i * len / max_coords).collect()
    }
}

fn scalar_of(g: &Graph<f64>, id: NodeId) -> Result<f64> {
    let v = g.value(id);
    if v.len() != 1 {
        return Err(Error::NotScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Max relative error between the analytic gradient of `build(input)` and
/// central differences with step `eps`, over up to `max_coords` evenly
/// spaced coordinates of `input`.
pub fn grad_check(
    build: impl Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
    input: &Tensor<f64>,
    eps: f64,
    max_coords: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.leaf(input.clone(), true);
    let loss = build(&mut g, x)?;
    let grads = g.backward(loss)?;
    let analytic = grads
        .node(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(t, true);
        let l = build(&mut g, x)?;
        scalar_of(&g, l)
    };
    let mut worst = 0.0f64;
    for i in coords(input.len(), max_coords) {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// As [`grad_check`], perturbing every parameter tensor of `store`
/// (up to `max_coords` coordinates each).
pub fn grad_check_params(
    store: &ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
    eps: f64,
    max_coords: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;
    let analytic = grads.param_grads(store);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        scalar_of(&g, l)
    };
    let mut worst = 0.0f64;
    let mut work = store.clone();
    for (pi, a) in analytic.iter().enumerate() {
        for i in coords(a.len(), max_coords) {
            let orig = work.tensors()[pi].data()[i];
            work.tensors_mut()[pi].data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work.tensors_mut()[pi].data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work.tensors_mut()[pi].data_mut()[i] = orig;
            worst = worst.max(relative_error(a.data()[i], (fp - fm) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
