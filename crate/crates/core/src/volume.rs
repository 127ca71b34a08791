//! Scalar volumes on a regular grid, intensity preprocessing, rigid trilinear
//! resampling, box downsampling, thresholding and Dice overlap.
//!
//! Array layout is C-order `(d, h, w)` with `w` fastest. Physical coordinates
//! are `(x, y, z)` with `x` along `w`, `y` along `h` and `z` along `d`;
//! `spacing` and `origin` are stored in that `(x, y, z)` order. Voxel centers
//! sit at `origin + index · spacing`.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geom::RigidTransform;

/// Default segmentation threshold on normalized intensity.
pub const DEFAULT_DSC_TAU: f32 = 0.3;

/// Sub-voxel offsets closer than this to a grid line snap onto it.
const SNAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: [f32; 3],
    origin: [f32; 3],
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape(format!(
                "volume dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::BadConfig(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::shape(format!(
                "volume {dims:?} needs {n} voxels, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// A zero volume whose physical center is at the coordinate origin.
    pub fn zeros(dims: [usize; 3], spacing: [f32; 3]) -> Self {
        Self::filled(dims, spacing, 0.0)
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: f32) -> Self {
        let origin = centered_origin(dims, spacing);
        Self::new(
            dims,
            spacing,
            origin,
            vec![value; dims[0] * dims[1] * dims[2]],
        )
        .expect("valid dims and spacing")
    }

    /// Builds a centered volume by evaluating `f(x, y, z)` (mm) at voxel centers.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        f: impl Fn(f64, f64, f64) -> f32 + Sync,
    ) -> Self {
        let mut v = Self::zeros(dims, spacing);
        let [_, h, w] = dims;
        let (origin, sp) = (v.origin, v.spacing);
        v.data
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(k, slab)| {
                let z = origin[2] as f64 + k as f64 * sp[2] as f64;
                for j in 0..h {
                    let y = origin[1] as f64 + j as f64 * sp[1] as f64;
                    for i in 0..w {
                        let x = origin[0] as f64 + i as f64 * sp[0] as f64;
                        slab[j * w + i] = f(x, y, z);
                    }
                }
            });
        v
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }
    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[2] + i
    }

    pub fn get(&self, k: usize, j: usize, i: usize) -> f32 {
        self.data[self.index(k, j, i)]
    }

    /// Physical `(x, y, z)` of voxel `(k, j, i)` = `(d, h, w)` indices.
    pub fn physical(&self, k: usize, j: usize, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] as f64 + i as f64 * self.spacing[0] as f64,
            self.origin[1] as f64 + j as f64 * self.spacing[1] as f64,
            self.origin[2] as f64 + k as f64 * self.spacing[2] as f64,
        )
    }

    /// Physical center of the grid (mean of voxel centers).
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] as f64 + (self.dims[2] - 1) as f64 * 0.5 * self.spacing[0] as f64,
            self.origin[1] as f64 + (self.dims[1] - 1) as f64 * 0.5 * self.spacing[1] as f64,
            self.origin[2] as f64 + (self.dims[0] - 1) as f64 * 0.5 * self.spacing[2] as f64,
        )
    }

    /// Physical edge length along each of `(x, y, z)`.
    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            self.dims[2] as f64 * self.spacing[0] as f64,
            self.dims[1] as f64 * self.spacing[1] as f64,
            self.dims[0] as f64 * self.spacing[2] as f64,
        )
    }

    pub fn same_grid(&self, other: &Volume3) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Trilinear sample at a physical point; neighbors outside the grid read `fill`.
    pub fn sample(&self, p: &Vector3<f64>, fill: f32) -> f32 {
        let ci = (p.x - self.origin[0] as f64) / self.spacing[0] as f64;
        let cj = (p.y - self.origin[1] as f64) / self.spacing[1] as f64;
        let ck = (p.z - self.origin[2] as f64) / self.spacing[2] as f64;
        self.sample_index(ck, cj, ci, fill)
    }

    /// Trilinear sample at continuous `(d, h, w)` index coordinates.
    pub fn sample_index(&self, ck: f64, cj: f64, ci: f64, fill: f32) -> f32 {
        let (k0, fk) = split_coord(ck);
        let (j0, fj) = split_coord(cj);
        let (i0, fi) = split_coord(ci);
        let [d, h, w] = self.dims;
        let at = |k: i64, j: i64, i: i64| -> f32 {
            if k < 0 || j < 0 || i < 0 || k >= d as i64 || j >= h as i64 || i >= w as i64 {
                fill
            } else {
                self.data[(k as usize * h + j as usize) * w + i as usize]
            }
        };
        let lerp = |a: f32, b: f32, t: f32| -> f32 {
            if t == 0.0 {
                a
            } else {
                a * (1.0 - t) + b * t
            }
        };
        let (fk, fj, fi) = (fk as f32, fj as f32, fi as f32);
        let plane = |k: i64| -> f32 {
            let r0 = lerp(at(k, j0, i0), at(k, j0, i0 + 1), fi);
            if fj == 0.0 {
                return r0;
            }
            let r1 = lerp(at(k, j0 + 1, i0), at(k, j0 + 1, i0 + 1), fi);
            lerp(r0, r1, fj)
        };
        let p0 = plane(k0);
        if fk == 0.0 {
            return p0;
        }
        lerp(p0, plane(k0 + 1), fk)
    }
}

/// Origin that puts the grid center at the physical origin.
pub fn centered_origin(dims: [usize; 3], spacing: [f32; 3]) -> [f32; 3] {
    [
        -((dims[2] - 1) as f32) * 0.5 * spacing[0],
        -((dims[1] - 1) as f32) * 0.5 * spacing[1],
        -((dims[0] - 1) as f32) * 0.5 * spacing[2],
    ]
}

fn split_coord(c: f64) -> (i64, f64) {
    let fl = c.floor();
    let f = c - fl;
    if f < SNAP {
        (fl as i64, 0.0)
    } else if f > 1.0 - SNAP {
        (fl as i64 + 1, 0.0)
    } else {
        (fl as i64, f)
    }
}

/// x̃ = ReLU(x − x_th) / (x_max − x_th), clamped to [0, 1].
pub fn threshold_normalize(v: &Volume3, x_th: f32, x_max: f32) -> Result<Volume3> {
    if !(x_max > x_th) {
        return Err(Error::BadRange { x_th, x_max });
    }
    let scale = 1.0 / (x_max as f64 - x_th as f64);
    let mut out = v.clone();
    for x in out.data.iter_mut() {
        let y = ((*x as f64 - x_th as f64).max(0.0) * scale).min(1.0);
        *x = y as f32;
    }
    Ok(out)
}

/// Warps `v` by `t` about its physical center: `out(p) = v(c + t⁻¹(p − c))`.
///
/// The output grid shares the input's spacing and center. A transform that
/// maps fixed coordinates to moving ones therefore produces the moving image
/// from the fixed one, and its inverse aligns moving back onto fixed.
pub fn resample_rigid(
    v: &Volume3,
    t: &RigidTransform,
    out_shape: [usize; 3],
    fill: f32,
) -> Volume3 {
    let spacing = v.spacing;
    let c = v.center();
    let mut out = Volume3::zeros(out_shape, spacing);
    // Shift the output grid so its center coincides with the input center.
    let oc = out.center();
    for a in 0..3 {
        out.origin[a] += (c[a] - oc[a]) as f32;
    }
    let inv = t.invert();
    let [_, h, w] = out_shape;
    let out_origin = out.origin;
    out.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..h {
                for i in 0..w {
                    let p = Vector3::new(
                        out_origin[0] as f64 + i as f64 * spacing[0] as f64,
                        out_origin[1] as f64 + j as f64 * spacing[1] as f64,
                        out_origin[2] as f64 + k as f64 * spacing[2] as f64,
                    );
                    let q = c + inv.apply(&(p - c));
                    slab[j * w + i] = v.sample(&q, fill);
                }
            }
        });
    out
}

/// Box-filter downsampling by an integer factor on every axis.
pub fn downsample(v: &Volume3, factor: usize) -> Result<Volume3> {
    if factor == 0 || v.dims.iter().any(|&n| n % factor != 0) {
        return Err(Error::BadFactor {
            factor,
            shape: v.dims,
        });
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let [d, h, w] = v.dims;
    let nd = [d / factor, h / factor, w / factor];
    let inv = 1.0 / (factor * factor * factor) as f64;
    let mut data = vec![0.0f32; nd[0] * nd[1] * nd[2]];
    data.par_chunks_mut(nd[1] * nd[2])
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..nd[1] {
                for i in 0..nd[2] {
                    let mut acc = 0.0f64;
                    for dk in 0..factor {
                        for dj in 0..factor {
                            let row = ((k * factor + dk) * h + j * factor + dj) * w + i * factor;
                            acc += v.data[row..row + factor]
                                .iter()
                                .map(|&x| x as f64)
                                .sum::<f64>();
                        }
                    }
                    slab[j * nd[2] + i] = (acc * inv) as f32;
                }
            }
        });
    let f = factor as f32;
    let spacing = [v.spacing[0] * f, v.spacing[1] * f, v.spacing[2] * f];
    let half = (factor - 1) as f32 * 0.5;
    let origin = [
        v.origin[0] + half * v.spacing[0],
        v.origin[1] + half * v.spacing[1],
        v.origin[2] + half * v.spacing[2],
    ];
    Volume3::new(nd, spacing, origin, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask3 {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<bool>,
}

impl BinaryMask3 {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::shape(format!(
                "mask {dims:?} needs {} voxels, got {}",
                dims[0] * dims[1] * dims[2],
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// `mask = value >= tau`.
pub fn binarize(v: &Volume3, tau: f32) -> BinaryMask3 {
    BinaryMask3 {
        dims: v.dims,
        spacing: v.spacing,
        data: v.data.iter().map(|&x| x >= tau).collect(),
    }
}

/// 2|A∩B| / (|A| + |B|); two empty masks score 1.
pub fn dice(a: &BinaryMask3, b: &BinaryMask3) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::shape(format!(
            "dice of masks {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

const VOL_MAGIC: &[u8; 4] = b"VOL3";
const VOL_VERSION: u32 = 1;
const VOL_HEADER: usize = 64;

/// Serializes to the raw `VOL3` format: 64-byte little-endian header
/// (magic, version, d, h, w, spacing xyz, origin xyz, zero padding) then
/// f32 voxels in C-order.
pub fn encode_volume(v: &Volume3) -> Vec<u8> {
    let mut buf = Vec::with_capacity(VOL_HEADER + 4 * v.data.len());
    buf.extend_from_slice(VOL_MAGIC);
    buf.extend_from_slice(&VOL_VERSION.to_le_bytes());
    for n in v.dims {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for s in v.spacing.iter().chain(&v.origin) {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf.resize(VOL_HEADER, 0);
    for x in &v.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume3> {
    if bytes.len() < VOL_HEADER {
        return Err(Error::BadVolumeFile(format!(
            "header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != VOL_MAGIC {
        return Err(Error::BadVolumeFile("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VOL_VERSION {
        return Err(Error::BadVolumeFile(format!(
            "unsupported version {version}"
        )));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let spacing = [f32_at(20), f32_at(24), f32_at(28)];
    let origin = [f32_at(32), f32_at(36), f32_at(40)];
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::BadVolumeFile("dims overflow".into()))?;
    let body = &bytes[VOL_HEADER..];
    if body.len() != n * 4 {
        return Err(Error::BadVolumeFile(format!(
            "expected {} data bytes for {dims:?}, found {}",
            n * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume3::new(dims, spacing, origin, data).map_err(|e| Error::BadVolumeFile(e.to_string()))
}

pub fn write_volume(path: &Path, v: &Volume3) -> Result<()> {
    fsutil::atomic_write(path, &encode_volume(v))
}

pub fn read_volume(path: &Path) -> Result<Volume3> {
    decode_volume(&fsutil::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::axis_angle_matrix;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> Volume3 {
        let n = dims[0] * dims[1] * dims[2];
        Volume3::new(
            dims,
            [1.0; 3],
            centered_origin(dims, [1.0; 3]),
            (0..n).map(|x| x as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn threshold_normalize_examples() {
        let v = Volume3::new(
            [1, 1, 4],
            [1.0; 3],
            [0.0; 3],
            vec![2000.0, 4000.0, 1000.0, 3000.0],
        )
        .unwrap();
        let n = threshold_normalize(&v, 2000.0, 4000.0).unwrap();
        assert_eq!(n.data(), &[0.0, 1.0, 0.0, 0.5]);
        assert!(matches!(
            threshold_normalize(&v, 2000.0, 2000.0),
            Err(Error::BadRange { .. })
        ));
        let again = threshold_normalize(&n, 0.0, 1.0).unwrap();
        assert_eq!(again, n);
    }

    #[test]
    fn identity_resample_is_exact() {
        let v = ramp([4, 5, 6]);
        let out = resample_rigid(&v, &RigidTransform::identity(), v.dims(), 0.0);
        assert_eq!(out, v);
    }

    #[test]
    fn unit_voxel_shift_along_x() {
        let v = ramp([3, 4, 5]);
        let t = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let out = resample_rigid(&v, &t, v.dims(), -1.0);
        for k in 0..3 {
            for j in 0..4 {
                assert_eq!(out.get(k, j, 0), -1.0);
                for i in 1..5 {
                    assert_eq!(out.get(k, j, i), v.get(k, j, i - 1));
                }
            }
        }
    }

    #[test]
    fn integer_shifts_match_array_shift_bitwise() {
        let mut v = Volume3::zeros([6, 7, 8], [0.3, 0.5, 0.7]);
        for (n, x) in v.data_mut().iter_mut().enumerate() {
            *x = ((n * 7919) % 101) as f32 / 101.0;
        }
        for (di, dj, dk) in [(1i64, 0i64, 0i64), (-2, 1, 0), (0, -1, 2), (3, 2, -1)] {
            let t = RigidTransform::from_translation(Vector3::new(
                di as f64 * 0.3f32 as f64,
                dj as f64 * 0.5f32 as f64,
                dk as f64 * 0.7f32 as f64,
            ));
            let out = resample_rigid(&v, &t, v.dims(), 0.0);
            for k in 0..6i64 {
                for j in 0..7i64 {
                    for i in 0..8i64 {
                        let (sk, sj, si) = (k - dk, j - dj, i - di);
                        let src =
                            if (0..6).contains(&sk) && (0..7).contains(&sj) && (0..8).contains(&si)
                            {
                                v.get(sk as usize, sj as usize, si as usize)
                            } else {
                                0.0
                            };
                        assert_eq!(
                            out.get(k as usize, j as usize, i as usize).to_bits(),
                            src.to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_round_trip_on_smooth_phantom() {
        let sp = [0.1f32; 3];
        let v = Volume3::from_fn([32, 32, 32], sp, |x, y, z| {
            let r2 = (x * x) / 0.8 + (y - 0.2) * (y - 0.2) / 0.5 + z * z / 0.3;
            (-r2).exp() as f32
        });
        let t = RigidTransform::new(
            axis_angle_matrix(Vector3::new(1.0, 1.0, 1.0), 1.1),
            Vector3::new(0.12, -0.05, 0.2),
        );
        let moved = resample_rigid(&v, &t, v.dims(), 0.0);
        let back = resample_rigid(&moved, &t.invert(), v.dims(), 0.0);
        let mut worst = 0.0f32;
        for k in 6..26 {
            for j in 6..26 {
                for i in 6..26 {
                    worst = worst.max((back.get(k, j, i) - v.get(k, j, i)).abs());
                }
            }
        }
        assert!(worst < 0.05, "round trip error {worst}");
    }

    #[test]
    fn downsample_examples() {
        let v = ramp([4, 4, 4]);
        assert_eq!(downsample(&v, 1).unwrap(), v);
        assert!(matches!(downsample(&v, 3), Err(Error::BadFactor { .. })));
        let c = Volume3::filled([16, 16, 16], [0.01; 3], 0.37);
        let small = downsample(&c, 8).unwrap();
        assert_eq!(small.dims(), [2, 2, 2]);
        assert!(small.data().iter().all(|&x| x == 0.37));
        assert!((small.mean() - c.mean()).abs() < 1e-6);
        // centers are preserved
        assert!((small.center() - c.center()).norm() < 1e-6);
    }

    #[test]
    fn downsample_full_resolution_shape() {
        let v = Volume3::zeros([512, 512, 512], [0.01; 3]);
        let s = downsample(&v, 8).unwrap();
        assert_eq!(s.dims(), [64, 64, 64]);
        for a in s.spacing() {
            assert!((a - 0.08).abs() < 1e-7);
        }
    }

    #[test]
    fn binarize_examples() {
        let z = Volume3::zeros([2, 3, 4], [1.0; 3]);
        assert_eq!(binarize(&z, 0.5).count(), 0);
        assert_eq!(binarize(&z, 0.0).count(), 24);
    }

    #[test]
    fn dice_examples() {
        let mk = |bits: &[u8]| {
            BinaryMask3::new(
                [1, 1, bits.len()],
                [1.0; 3],
                bits.iter().map(|&b| b == 1).collect(),
            )
            .unwrap()
        };
        let a = mk(&[1, 1, 1, 1, 0, 0]);
        let b = mk(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mk(&[0, 0, 0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&mk(&[0, 0]), &mk(&[0, 0])).unwrap(), 1.0);
        assert!(matches!(
            dice(&a, &mk(&[1])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn volume_file_round_trip_and_rejects() {
        let v = Volume3::new(
            [2, 3, 4],
            [0.08, 0.08, 0.1],
            [-1.0, 0.5, 2.0],
            (0..24).map(|x| x as f32 * 0.25).collect(),
        )
        .unwrap();
        let bytes = encode_volume(&v);
        assert_eq!(bytes.len(), 64 + 24 * 4);
        assert_eq!(decode_volume(&bytes).unwrap(), v);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_volume(&bad), Err(Error::BadVolumeFile(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_volume(&bad), Err(Error::BadVolumeFile(_))));
        assert!(decode_volume(&bytes[..100]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vol");
        write_volume(&p, &v).unwrap();
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    proptest! {
        #[test]
        fn dice_is_symmetric(a in proptest::collection::vec(any::<bool>(), 27), b in proptest::collection::vec(any::<bool>(), 27)) {
            let ma = BinaryMask3::new([3, 3, 3], [1.0; 3], a).unwrap();
            let mb = BinaryMask3::new([3, 3, 3], [1.0; 3], b).unwrap();
            let d = dice(&ma, &mb).unwrap();
            prop_assert_eq!(d, dice(&mb, &ma).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn binarize_is_monotone(vals in proptest::collection::vec(0.0f32..1.0, 8), t1 in 0.0f32..1.0, t2 in 0.0f32..1.0) {
            let v = Volume3::new([2, 2, 2], [1.0; 3], [0.0; 3], vals).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (ml, mh) = (binarize(&v, lo), binarize(&v, hi));
            for (a, b) in ml.data().iter().zip(mh.data()) {
                prop_assert!(!*b || *a);
            }
        }

        #[test]
        fn normalize_is_bounded_and_monotone(a in -5000.0f32..10000.0, b in -5000.0f32..10000.0) {
            let v = Volume3::new([1, 1, 2], [1.0; 3], [0.0; 3], vec![a, b]).unwrap();
            let n = threshold_normalize(&v, 2000.0, 6000.0).unwrap();
            let (x, y) = (n.data()[0], n.data()[1]);
            prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            if a <= b { prop_assert!(x <= y); }
        }
    }
}
