//! Residual down/up-sampling blocks.
//!
//! Res-down: a stride-2 3×3×3 projection `p`, then a residual pair
//! `r = conv(leaky(conv(leaky(p))))`, output `leaky(p + r)`.
//! Res-up: nearest ×2 upsampling and a 3×3×3 conv, concatenation with the
//! skip map, a fusing 3×3×3 conv `p`, then the same residual pair.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResDownParams {
    pub proj: ConvParams,
    pub res_a: ConvParams,
    pub res_b: ConvParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResUpParams {
    pub up: ConvParams,
    pub fuse: ConvParams,
    pub res_a: ConvParams,
    pub res_b: ConvParams,
}

/// He-style fan-in scaled uniform init, zero bias.
pub fn add_conv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    bias: bool,
    rng: &mut R,
) -> ConvParams {
    let fan_in = c_in * kernel * kernel * kernel;
    let bound = (6.0 / fan_in as f64).sqrt();
    let weight = store.add(
        format!("{name}.weight"),
        Tensor::uniform(vec![c_out, c_in, kernel, kernel, kernel], bound, rng),
    );
    let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![c_out])));
    ConvParams { weight, bias }
}

impl ResDownParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            proj: add_conv(store, &format!("{name}.proj"), c_in, c_out, 3, bias, rng),
            res_a: add_conv(store, &format!("{name}.res_a"), c_out, c_out, 3, bias, rng),
            res_b: add_conv(store, &format!("{name}.res_b"), c_out, c_out, 3, bias, rng),
        }
    }
}

impl ResUpParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_skip: usize,
        c_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            up: add_conv(store, &format!("{name}.up"), c_in, c_out, 3, bias, rng),
            fuse: add_conv(
                store,
                &format!("{name}.fuse"),
                c_out + c_skip,
                c_out,
                3,
                bias,
                rng,
            ),
            res_a: add_conv(store, &format!("{name}.res_a"), c_out, c_out, 3, bias, rng),
            res_b: add_conv(store, &format!("{name}.res_b"), c_out, c_out, 3, bias, rng),
        }
    }
}

fn conv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &ConvParams,
    x: NodeId,
    stride: usize,
) -> Result<NodeId> {
    let w = g.param(store, p.weight);
    let b = p.bias.map(|b| g.param(store, b));
    g.conv3d(x, w, b, stride, 1)
}

fn residual_pair<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    a: &ConvParams,
    b: &ConvParams,
    p: NodeId,
) -> Result<NodeId> {
    let h = g.leaky_relu(p, LEAKY_SLOPE);
    let h = conv(g, store, a, h, 1)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let r = conv(g, store, b, h, 1)?;
    let s = g.add(p, r)?;
    Ok(g.leaky_relu(s, LEAKY_SLOPE))
}

/// Halves the spatial size of a `[N, C, D, H, W]` map.
pub fn res_down<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &ResDownParams,
    x: NodeId,
) -> Result<NodeId> {
    let s = g.shape(x);
    if s.len() != 5 || s[2..].iter().any(|&d| d % 2 != 0) {
        return Err(Error::shape(format!(
            "res_down needs even spatial dims, got {s:?}"
        )));
    }
    let proj = conv(g, store, &p.proj, x, 2)?;
    residual_pair(g, store, &p.res_a, &p.res_b, proj)
}

/// Doubles the spatial size of `x` and fuses a skip map of the doubled size.
pub fn res_up<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &ResUpParams,
    x: NodeId,
    skip: NodeId,
) -> Result<NodeId> {
    let (xs, ss) = (g.shape(x), g.shape(skip));
    if xs.len() != 5 || ss.len() != 5 || xs[0] != ss[0] || (2..5).any(|a| ss[a] != 2 * xs[a]) {
        return Err(Error::shape(format!(
            "res_up input {xs:?} with skip {ss:?}"
        )));
    }
    let u = g.upsample2(x)?;
    let u = conv(g, store, &p.up, u, 1)?;
    let cat = g.concat(&[u, skip], 1)?;
    let fused = conv(g, store, &p.fuse, cat, 1)?;
    residual_pair(g, store, &p.res_a, &p.res_b, fused)
}
