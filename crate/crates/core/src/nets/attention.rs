//! Embedded-Gaussian non-local links.
//!
//! With a shared embedding `W` (a `C×C` matrix applied per voxel), scores are
//! `E[k, j] = (W·x_f[k])ᵀ (W·x_m[j])`. The moving-to-fixed output at fixed
//! position `k` is the softmax-over-`j` average of `W·x_m[j]`; the reverse
//! direction uses `Eᵀ` and averages `W·x_f[j]`. Normalizing each direction by
//! its own kernel is exactly a row softmax.

use crate::autodiff::{Graph, NodeId, Scalar};
use crate::error::{Error, Result};

/// Node handles produced by one mutual link (batch-first, positions flattened).
#[derive(Debug, Clone, Copy)]
pub struct MnlOutput {
    /// `[N, C, D, H, W]`, delivered to the fixed branch.
    pub m2f: NodeId,
    /// `[N, C, D, H, W]`, delivered to the moving branch.
    pub f2m: NodeId,
    /// Pre-softmax `[N, n, n]` scores, fixed positions on rows.
    pub scores_fm: NodeId,
    /// Exact transpose of `scores_fm`.
    pub scores_mf: NodeId,
    pub attn_fm: NodeId,
    pub attn_mf: NodeId,
}

/// Applies a `[C, C]` embedding node to a `[N, C, D, H, W]` map, returning
/// `[N, C, n]`.
fn embed<T: Scalar>(g: &mut Graph<T>, w: NodeId, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let ws = g.shape(w).to_vec();
    if s.len() != 5 || ws != [s[1], s[1]] {
        return Err(Error::shape(format!(
            "link embedding {ws:?} on feature map {s:?}"
        )));
    }
    let kernel = g.reshape(w, vec![s[1], s[1], 1, 1, 1])?;
    let e = g.conv3d(x, kernel, None, 1, 0)?;
    g.reshape(e, vec![s[0], s[1], s[2] * s[3] * s[4]])
}

/// `Σ_j softmax_j(scores[k, j]) · values[:, j]` → `[N, C, n]`.
fn attend<T: Scalar>(g: &mut Graph<T>, scores: NodeId, values: NodeId) -> Result<(NodeId, NodeId)> {
    let attn = g.softmax(scores, 2)?;
    let at = g.transpose(attn)?;
    Ok((g.bmm(values, at)?, attn))
}

/// Mutual non-local link between the fixed and moving feature maps.
pub fn mnl_link<T: Scalar>(
    g: &mut Graph<T>,
    xf: NodeId,
    xm: NodeId,
    w: NodeId,
) -> Result<MnlOutput> {
    let shape = g.shape(xf).to_vec();
    if g.shape(xm) != shape.as_slice() {
        return Err(Error::shape(format!(
            "mnl_link of {shape:?} and {:?}",
            g.shape(xm)
        )));
    }
    let ef = embed(g, w, xf)?;
    let em = embed(g, w, xm)?;
    let eft = g.transpose(ef)?;
    let scores_fm = g.bmm(eft, em)?;
    let scores_mf = g.transpose(scores_fm)?;
    let (m2f, attn_fm) = attend(g, scores_fm, em)?;
    let (f2m, attn_mf) = attend(g, scores_mf, ef)?;
    let m2f = g.reshape(m2f, shape.clone())?;
    let f2m = g.reshape(f2m, shape)?;
    Ok(MnlOutput {
        m2f,
        f2m,
        scores_fm,
        scores_mf,
        attn_fm,
        attn_mf,
    })
}

/// Self non-local link: the same attention within one branch. Returns the
/// output map and the `[N, n, n]` attention matrix.
pub fn snl_link<T: Scalar>(g: &mut Graph<T>, x: NodeId, w: NodeId) -> Result<(NodeId, NodeId)> {
    let shape = g.shape(x).to_vec();
    let e = embed(g, w, x)?;
    let et = g.transpose(e)?;
    let scores = g.bmm(et, e)?;
    let (y, attn) = attend(g, scores, e)?;
    Ok((g.reshape(y, shape)?, attn))
}
