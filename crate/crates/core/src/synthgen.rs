//! Random rigid transforms, synthetic fixed/moving pairs with intensity
//! augmentation, and procedural bone-like phantoms.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geom::{axis_angle_matrix, params_from_transform, RigidTransform, TransformParams};
use crate::volume::{resample_rigid, Volume3};

/// Physical edge length of generated phantoms (64 voxels at 80 µm).
pub const PHANTOM_EXTENT_MM: f64 = 5.12;

/// Independent, reproducible stream for sample `index` under `seed`.
pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Half-width of the per-axis uniform translation range, mm.
    pub t_range_mm: f64,
    /// Rotation angle range, radians.
    pub angle_range: (f64, f64),
    pub intensity_scale_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            t_range_mm: 0.64,
            angle_range: (-PI, PI),
            intensity_scale_range: (0.95, 1.05),
            noise_sigma: 0.001,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.intensity_scale_range;
        let (a0, a1) = self.angle_range;
        if !(self.t_range_mm > 0.0) {
            return Err(Error::BadConfig("t_range_mm must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::BadConfig("noise_sigma must be non-negative".into()));
        }
        if !(s0 > 0.0 && s1 >= s0) {
            return Err(Error::BadConfig(format!(
                "bad intensity scale range ({s0}, {s1})"
            )));
        }
        if !(a1 >= a0) {
            return Err(Error::BadConfig(format!("bad angle range ({a0}, {a1})")));
        }
        Ok(())
    }

    /// Augmentation disabled: unit scale, no noise.
    pub fn without_augmentation(mut self) -> Self {
        self.intensity_scale_range = (1.0, 1.0);
        self.noise_sigma = 0.0;
        self
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform direction on S² from a normalized isotropic Gaussian draw.
pub fn sample_axis_uniform<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Uniformly random rotation (Haar measure), used to pose phantoms.
pub fn sample_rotation_uniform<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    // Random axis with angle density ∝ (1 − cos θ) via rejection.
    let axis = sample_axis_uniform(rng);
    let angle = loop {
        let a = uniform(rng, 0.0, PI);
        if rng.random::<f64>() * 2.0 <= 1.0 - a.cos() {
            break a;
        }
    };
    axis_angle_matrix(axis, angle)
}

/// Axis uniform on S², angle uniform in `cfg.angle_range`, each translation
/// component uniform in `±cfg.t_range_mm`.
pub fn sample_rigid<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SynthConfig,
) -> (TransformParams, RigidTransform) {
    let axis = sample_axis_uniform(rng);
    let angle = uniform(rng, cfg.angle_range.0, cfg.angle_range.1);
    let r = cfg.t_range_mm;
    let t = Vector3::new(
        uniform(rng, -r, r),
        uniform(rng, -r, r),
        uniform(rng, -r, r),
    );
    let tf = RigidTransform::from_axis_angle(axis, angle, t);
    (params_from_transform(&tf), tf)
}

/// `clamp(s·v + n, 0, 1)` with a global scale `s` and per-voxel Gaussian noise.
pub fn augment<R: Rng + ?Sized>(v: &Volume3, rng: &mut R, cfg: &SynthConfig) -> Volume3 {
    let (lo, hi) = cfg.intensity_scale_range;
    let s = uniform(rng, lo, hi) as f32;
    let sigma = cfg.noise_sigma;
    let mut out = v.clone();
    for x in out.data_mut() {
        let mut y = *x * s;
        if sigma > 0.0 {
            y += (sigma * rng.sample::<f64, _>(StandardNormal)) as f32;
        }
        *x = y.clamp(0.0, 1.0);
    }
    out
}

/// A synthetic training/test pair with its ground-truth transform.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub fixed: Volume3,
    pub moving: Volume3,
    pub theta: TransformParams,
    pub transform: RigidTransform,
}

/// Samples a rigid transform, warps `v` into the moving image, and augments
/// both sides independently.
pub fn make_pair<R: Rng + ?Sized>(v: &Volume3, rng: &mut R, cfg: &SynthConfig) -> SyntheticPair {
    let (_, tf) = sample_rigid(rng, cfg);
    make_pair_with(v, &tf, rng, cfg)
}

/// As [`make_pair`] with a caller-supplied transform.
pub fn make_pair_with<R: Rng + ?Sized>(
    v: &Volume3,
    tf: &RigidTransform,
    rng: &mut R,
    cfg: &SynthConfig,
) -> SyntheticPair {
    let moving = resample_rigid(v, tf, v.dims(), 0.0);
    let fixed = augment(v, rng, cfg);
    let moving = augment(&moving, rng, cfg);
    SyntheticPair {
        fixed,
        moving,
        theta: params_from_transform(tf),
        transform: *tf,
    }
}

/// Shape parameters of one procedural "subject".
#[derive(Debug, Clone)]
struct PhantomShape {
    pose: Matrix3<f64>,
    half_length: f64,
    bend: f64,
    r_outer: f64,
    r_inner: f64,
    shaft_intensity: f64,
    head_center: Vector3<f64>,
    head_radii: Vector3<f64>,
    head_intensity: f64,
    fragments: Vec<(Vector3<f64>, f64)>,
}

impl PhantomShape {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let half_length = uniform(rng, 0.33, 0.38);
        let bend = uniform(rng, 0.25, 0.45);
        let r_outer = uniform(rng, 0.21, 0.24);
        let r_inner = r_outer * uniform(rng, 0.45, 0.6);
        let head_radii = Vector3::new(
            uniform(rng, 0.27, 0.3),
            uniform(rng, 0.2, 0.22),
            uniform(rng, 0.17, 0.19),
        );
        let head_center = Vector3::new(
            bend * half_length * half_length + uniform(rng, 0.06, 0.1),
            uniform(rng, -0.03, 0.03),
            half_length,
        );
        let mut shape = Self {
            pose: sample_rotation_uniform(rng),
            half_length,
            bend,
            r_outer,
            r_inner,
            shaft_intensity: uniform(rng, 0.7, 0.9),
            head_center,
            head_radii,
            head_intensity: uniform(rng, 0.6, 0.75),
            fragments: Vec::new(),
        };
        let n_frag = rng.random_range(1..=3);
        let mut attempts = 0;
        while shape.fragments.len() < n_frag && attempts < 1000 {
            attempts += 1;
            let r = uniform(rng, 0.07, 0.1);
            let c = sample_axis_uniform(rng) * uniform(rng, 0.3, 0.6);
            let clear_shaft = shape.shaft_distance(&c) > shape.r_outer + r + 0.06;
            let clear_head = ((c - shape.head_center).component_div(&shape.head_radii)).norm()
                > 1.0 + (r + 0.06) / 0.17;
            let clear_frag = shape
                .fragments
                .iter()
                .all(|(o, ro)| (o - c).norm() > r + ro + 0.04);
            if clear_shaft && clear_head && clear_frag {
                shape.fragments.push((c, r));
            }
        }
        shape
    }

    fn centerline(&self, s: f64) -> Vector3<f64> {
        Vector3::new(self.bend * s * s, 0.0, s)
    }

    /// Distance from a local-frame point to the shaft centerline polyline.
    fn shaft_distance(&self, p: &Vector3<f64>) -> f64 {
        const SEGMENTS: usize = 24;
        let mut best = f64::INFINITY;
        let mut prev = self.centerline(-self.half_length);
        for k in 1..=SEGMENTS {
            let s = -self.half_length + 2.0 * self.half_length * k as f64 / SEGMENTS as f64;
            let next = self.centerline(s);
            let seg = next - prev;
            let t = ((p - prev).dot(&seg) / seg.norm_squared()).clamp(0.0, 1.0);
            best = best.min((p - (prev + seg * t)).norm());
            prev = next;
        }
        best
    }

    /// Intensity at a point in normalized coordinates (unit = half extent).
    fn intensity(&self, u: &Vector3<f64>, edge: f64) -> f64 {
        let p = self.pose.transpose() * u;
        // Soft inside-ness for signed distance `sd` (positive inside).
        let soft = |sd: f64| smoothstep((sd / edge + 0.5).clamp(0.0, 1.0));
        let d = self.shaft_distance(&p);
        let shaft = soft(self.r_outer - d) * (1.0 - soft(self.r_inner - d));
        let mut value = self.shaft_intensity * shaft;

        let q = (p - self.head_center).component_div(&self.head_radii);
        let head_sd = (1.0 - q.norm()) * self.head_radii.min();
        value = value.max(self.head_intensity * soft(head_sd));

        for (c, r) in &self.fragments {
            value = value.max(soft(r - (p - c).norm()));
        }
        value
    }
}

fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Bone-like phantom: a curved hollow shaft, a bulbous end and 1–3 small
/// detached bright fragments, randomly posed, background 0.
///
/// The object stays inside the sphere of radius ~0.62 × half extent so that
/// arbitrary rotations about the center plus the default translation range
/// keep it in frame. Edges are smoothed over one voxel.
pub fn gen_phantom<R: Rng + ?Sized>(rng: &mut R, shape: [usize; 3]) -> Volume3 {
    let shape_params = PhantomShape::sample(rng);
    render(&shape_params, shape)
}

fn render(shape_params: &PhantomShape, shape: [usize; 3]) -> Volume3 {
    let spacing = [
        (PHANTOM_EXTENT_MM / shape[2] as f64) as f32,
        (PHANTOM_EXTENT_MM / shape[1] as f64) as f32,
        (PHANTOM_EXTENT_MM / shape[0] as f64) as f32,
    ];
    let half = PHANTOM_EXTENT_MM / 2.0;
    let edge = 2.0 / shape.iter().copied().min().unwrap() as f64;
    Volume3::from_fn(shape, spacing, |x, y, z| {
        shape_params.intensity(&(Vector3::new(x, y, z) / half), edge) as f32
    })
}

/// A phantom plus its contrast-enhanced counterpart: the same bone with an
/// extra moderately bright layer capping the bulbous end.
pub fn gen_phantom_pair<R: Rng + ?Sized>(rng: &mut R, shape: [usize; 3]) -> (Volume3, Volume3) {
    let params = PhantomShape::sample(rng);
    let plain = render(&params, shape);
    let mut contrast = plain.clone();
    let half = PHANTOM_EXTENT_MM / 2.0;
    let edge = 2.0 / shape.iter().copied().min().unwrap() as f64;
    let layer = 0.06;
    let [d, h, w] = shape;
    for k in 0..d {
        for j in 0..h {
            for i in 0..w {
                let u = contrast.physical(k, j, i) / half;
                let p = params.pose.transpose() * u;
                let q = (p - params.head_center).component_div(&params.head_radii);
                let sd = (q.norm() - 1.0) * params.head_radii.min();
                // Outside the head, within `layer`, on the far cap only.
                if p.z > params.head_center.z {
                    let occ = smoothstep(((layer - sd) / edge + 0.5).clamp(0.0, 1.0))
                        * smoothstep((sd / edge + 0.5).clamp(0.0, 1.0));
                    let idx = contrast.index(k, j, i);
                    let cur = contrast.data()[idx];
                    contrast.data_mut()[idx] = cur.max((0.45 * occ) as f32);
                }
            }
        }
    }
    (plain, contrast)
}

/// One line of the JSONL dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub fixed_path: PathBuf,
    pub moving_path: PathBuf,
    pub theta_r: [f64; 9],
    pub theta_t: [f64; 3],
    pub seed: u64,
}

impl ManifestRecord {
    pub fn theta(&self) -> TransformParams {
        TransformParams {
            theta_r: self.theta_r,
            theta_t: self.theta_t,
        }
    }
}

pub fn encode_manifest(records: &[ManifestRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    fsutil::atomic_write(path, encode_manifest(records)?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = String::from_utf8(fsutil::read(path)?)
        .map_err(|e| Error::BadConfig(format!("manifest is not UTF-8: {e}")))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
