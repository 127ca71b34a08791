//! Dense kernels behind the graph primitives. Every output element is owned
//! by exactly one worker and accumulated in a fixed order, so results do not
//! depend on how rayon partitions the work.

use rayon::prelude::*;

use super::tensor::Scalar;

/// Geometry of a cubic-kernel 3D convolution over `[N, C, D, H, W]` tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < kernel {
        return None;
    }
    Some((len + 2 * pad - kernel) / stride + 1)
}

/// Output indices `o` in `[lo, hi)` whose input tap `o·s + k − p` is in bounds.
#[inline]
fn tap_range(out_len: usize, in_len: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.input[0] * self.input[1] * self.input[2]
    }
    fn out_plane(&self) -> usize {
        self.output[0] * self.output[1] * self.output[2]
    }
    fn k3(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    /// Visits every (kernel tap, output row) pair: calls
    /// `f(kd, kh, kw, out_row_offset, in_row_offset, ow_lo, ow_hi)`.
    #[inline]
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        for kd in 0..k {
            let (d_lo, d_hi) = tap_range(od, d, s, p, kd);
            for kh in 0..k {
                let (h_lo, h_hi) = tap_range(oh, h, s, p, kh);
                for kw in 0..k {
                    let (w_lo, w_hi) = tap_range(ow, w, s, p, kw);
                    if w_lo >= w_hi {
                        continue;
                    }
                    for o_d in d_lo..d_hi {
                        let i_d = o_d * s + kd - p;
                        for o_h in h_lo..h_hi {
                            let i_h = o_h * s + kh - p;
                            f(
                                kd,
                                kh,
                                kw,
                                (o_d * oh + o_h) * ow,
                                (i_d * h + i_h) * w,
                                w_lo,
                                w_hi,
                            );
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let (in_plane, out_plane, k3) = (g.in_plane(), g.out_plane(), g.k3());
    let (s, p) = (g.stride, g.pad);
    out.par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(idx, o)| {
            let (n, co) = (idx / g.c_out, idx % g.c_out);
            let b0 = bias.map_or(T::zero(), |b| b[co]);
            o.iter_mut().for_each(|v| *v = b0);
            for ci in 0..g.c_in {
                let xin = &x[(n * g.c_in + ci) * in_plane..][..in_plane];
                let wk = &w[(co * g.c_in + ci) * k3..][..k3];
                g.for_each_row(|kd, kh, kw, orow, irow, lo, hi| {
                    let wv = wk[(kd * g.kernel + kh) * g.kernel + kw];
                    let orow = &mut o[orow + lo..orow + hi];
                    if s == 1 {
                        let irow = &xin[irow + lo + kw - p..][..hi - lo];
                        for (a, &b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    } else {
                        for (j, a) in orow.iter_mut().enumerate() {
                            *a += wv * xin[irow + (lo + j) * s + kw - p];
                        }
                    }
                });
            }
        });
}

/// Gradient with respect to the input (the adjoint of the forward map).
pub fn conv3d_backward_input<T: Scalar>(g: &ConvGeom, gy: &[T], w: &[T], gx: &mut [T]) {
    let (in_plane, out_plane, k3) = (g.in_plane(), g.out_plane(), g.k3());
    let (s, p) = (g.stride, g.pad);
    gx.par_chunks_mut(in_plane)
        .enumerate()
        .for_each(|(idx, gxp)| {
            let (n, ci) = (idx / g.c_in, idx % g.c_in);
            gxp.iter_mut().for_each(|v| *v = T::zero());
            for co in 0..g.c_out {
                let gyp = &gy[(n * g.c_out + co) * out_plane..][..out_plane];
                let wk = &w[(co * g.c_in + ci) * k3..][..k3];
                g.for_each_row(|kd, kh, kw, orow, irow, lo, hi| {
                    let wv = wk[(kd * g.kernel + kh) * g.kernel + kw];
                    let grow = &gyp[orow + lo..orow + hi];
                    if s == 1 {
                        let xrow = &mut gxp[irow + lo + kw - p..][..hi - lo];
                        for (a, &b) in xrow.iter_mut().zip(grow) {
                            *a += wv * b;
                        }
                    } else {
                        for (j, &b) in grow.iter().enumerate() {
                            gxp[irow + (lo + j) * s + kw - p] += wv * b;
                        }
                    }
                });
            }
        });
}

/// Gradients with respect to the kernel and (optionally) the bias.
pub fn conv3d_backward_weight<T: Scalar>(
    g: &ConvGeom,
    gy: &[T],
    x: &[T],
    gw: &mut [T],
    gb: Option<&mut [T]>,
) {
    let (in_plane, out_plane, k3) = (g.in_plane(), g.out_plane(), g.k3());
    let (s, p) = (g.stride, g.pad);
    gw.par_chunks_mut(g.c_in * k3)
        .enumerate()
        .for_each(|(co, gwc)| {
            gwc.iter_mut().for_each(|v| *v = T::zero());
            for n in 0..g.batch {
                let gyp = &gy[(n * g.c_out + co) * out_plane..][..out_plane];
                for ci in 0..g.c_in {
                    let xin = &x[(n * g.c_in + ci) * in_plane..][..in_plane];
                    let gk = &mut gwc[ci * k3..][..k3];
                    g.for_each_row(|kd, kh, kw, orow, irow, lo, hi| {
                        let grow = &gyp[orow + lo..orow + hi];
                        let mut acc = T::zero();
                        if s == 1 {
                            let xrow = &xin[irow + lo + kw - p..][..hi - lo];
                            for (&a, &b) in grow.iter().zip(xrow) {
                                acc += a * b;
                            }
                        } else {
                            for (j, &a) in grow.iter().enumerate() {
                                acc += a * xin[irow + (lo + j) * s + kw - p];
                            }
                        }
                        gk[(kd * g.kernel + kh) * g.kernel + kw] += acc;
                    });
                }
            }
        });
    if let Some(gb) = gb {
        for (co, b) in gb.iter_mut().enumerate() {
            let mut acc = T::zero();
            for n in 0..g.batch {
                for &v in &gy[(n * g.c_out + co) * out_plane..][..out_plane] {
                    acc += v;
                }
            }
            *b = acc;
        }
    }
}

/// Nearest-neighbour ×2 upsampling of `[N·C, D, H, W]` planes.
pub fn upsample2_forward<T: Scalar>(x: &[T], planes: usize, dims: [usize; 3], out: &mut [T]) {
    let [d, h, w] = dims;
    let (h2, w2) = (2 * h, 2 * w);
    let in_plane = d * h * w;
    out.par_chunks_mut(8 * in_plane)
        .enumerate()
        .take(planes)
        .for_each(|(pi, o)| {
            let xp = &x[pi * in_plane..][..in_plane];
            for k in 0..2 * d {
                for j in 0..h2 {
                    let src = &xp[((k / 2) * h + j / 2) * w..][..w];
                    let dst = &mut o[(k * h2 + j) * w2..][..w2];
                    for (i, v) in dst.iter_mut().enumerate() {
                        *v = src[i / 2];
                    }
                }
            }
        });
}

pub fn upsample2_backward<T: Scalar>(gy: &[T], planes: usize, dims: [usize; 3], gx: &mut [T]) {
    let [d, h, w] = dims;
    let (h2, w2) = (2 * h, 2 * w);
    let in_plane = d * h * w;
    gx.par_chunks_mut(in_plane)
        .enumerate()
        .take(planes)
        .for_each(|(pi, g)| {
            let gp = &gy[pi * 8 * in_plane..][..8 * in_plane];
            for k in 0..d {
                for j in 0..h {
                    for i in 0..w {
                        let mut acc = T::zero();
                        for a in 0..2 {
                            for b in 0..2 {
                                let row = ((2 * k + a) * h2 + 2 * j + b) * w2 + 2 * i;
                                acc += gp[row] + gp[row + 1];
                            }
                        }
                        g[(k * h + j) * w + i] = acc;
                    }
                }
            }
        });
}

/// `out[b] = a[b] · c[b]` for `[B, M, K] × [B, K, N]`.
pub fn bmm_forward<T: Scalar>(a: &[T], c: &[T], dims: [usize; 4], out: &mut [T]) {
    let [_, m, k, n] = dims;
    out.par_chunks_mut(n).enumerate().for_each(|(row, o)| {
        let (b, i) = (row / m, row % m);
        o.iter_mut().for_each(|v| *v = T::zero());
        let arow = &a[(b * m + i) * k..][..k];
        let cmat = &c[b * k * n..][..k * n];
        for (kk, &av) in arow.iter().enumerate() {
            for (v, &cv) in o.iter_mut().zip(&cmat[kk * n..][..n]) {
                *v += av * cv;
            }
        }
    });
}

/// Returns `(ga, gc)` for `out = a · c`.
pub fn bmm_backward<T: Scalar>(
    gy: &[T],
    a: &[T],
    c: &[T],
    dims: [usize; 4],
    ga: &mut [T],
    gc: &mut [T],
) {
    let [_, m, k, n] = dims;
    // ga[b,i,kk] = Σ_j gy[b,i,j] c[b,kk,j]
    ga.par_chunks_mut(k).enumerate().for_each(|(row, g)| {
        let b = row / m;
        let grow = &gy[row * n..][..n];
        let cmat = &c[b * k * n..][..k * n];
        for (kk, v) in g.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(&cmat[kk * n..][..n]) {
                acc += x * y;
            }
            *v = acc;
        }
    });
    // gc[b,kk,j] = Σ_i a[b,i,kk] gy[b,i,j]
    gc.par_chunks_mut(n).enumerate().for_each(|(row, g)| {
        let (b, kk) = (row / k, row % k);
        g.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..m {
            let av = a[(b * m + i) * k + kk];
            for (v, &y) in g.iter_mut().zip(&gy[(b * m + i) * n..][..n]) {
                *v += av * y;
            }
        }
    });
}

/// Swaps the last two axes of `[B, M, N]`.
pub fn transpose_last2<T: Scalar>(x: &[T], batch: usize, m: usize, n: usize, out: &mut [T]) {
    for b in 0..batch {
        let src = &x[b * m * n..][..m * n];
        let dst = &mut out[b * m * n..][..m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
}

/// Softmax over the middle axis of an `[outer, len, inner]` view.
pub fn softmax_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize, out: &mut [T]) {
    out.par_chunks_mut(len * inner)
        .enumerate()
        .take(outer)
        .for_each(|(o, y)| {
            let xs = &x[o * len * inner..][..len * inner];
            for i in 0..inner {
                let mut mx = T::neg_infinity();
                for l in 0..len {
                    mx = mx.max(xs[l * inner + i]);
                }
                let mut sum = T::zero();
                for l in 0..len {
                    let e = (xs[l * inner + i] - mx).exp();
                    y[l * inner + i] = e;
                    sum += e;
                }
                let inv = T::one() / sum;
                for l in 0..len {
                    y[l * inner + i] *= inv;
                }
            }
        });
}

pub fn softmax_backward<T: Scalar>(
    gy: &[T],
    y: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    gx: &mut [T],
) {
    gx.par_chunks_mut(len * inner)
        .enumerate()
        .take(outer)
        .for_each(|(o, g)| {
            let ys = &y[o * len * inner..][..len * inner];
            let gs = &gy[o * len * inner..][..len * inner];
            for i in 0..inner {
                let mut dot = T::zero();
                for l in 0..len {
                    dot += gs[l * inner + i] * ys[l * inner + i];
                }
                for l in 0..len {
                    g[l * inner + i] = ys[l * inner + i] * (gs[l * inner + i] - dot);
                }
            }
        });
}
