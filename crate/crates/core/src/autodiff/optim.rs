use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Classical momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum<T> {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    /// Zero velocity for every tensor in `params`.
    pub fn new(params: &ParamStore<T>, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        let (lr, mu) = (self.lr, self.momentum);
        sgd_momentum_step(params, grads, &mut self.velocity, lr, mu)
    }
}

pub fn sgd_momentum_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: f64,
    mu: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(mu));
    for ((p, g), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(velocity.iter_mut())
    {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(format!(
                "parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
