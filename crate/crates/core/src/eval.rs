//! Rotation and translation sweeps, pair evaluation (TE/RE/DSC) and reports.
//!
//! A predicted transform maps fixed-image coordinates to moving-image
//! coordinates, exactly like the transform used to synthesize the moving
//! image. Aligning the moving image for DSC therefore warps it by the
//! inverse of the prediction.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geom::{
    params_from_transform, rotation_error, translation_error, RigidTransform, TransformParams,
};
use crate::nets::Predictor;
use crate::synthgen::{make_pair_with, rng_for, SynthConfig};
use crate::volume::{binarize, dice, resample_rigid, Volume3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub axis: [f64; 3],
    pub n_steps: usize,
    /// Translation held fixed during the rotation sweep, mm.
    pub fixed_translation: [f64; 3],
    /// Rotation about `axis` held fixed during the translation sweep.
    pub fixed_rotation_angle: f64,
    pub angle_range: (f64, f64),
    /// Signed distance along `axis`, mm.
    pub translation_range: (f64, f64),
}

impl Default for SweepSpec {
    fn default() -> Self {
        let a = 1.0 / 3f64.sqrt();
        let half = 3f64.sqrt() / 2.0;
        Self {
            axis: [a; 3],
            n_steps: 11,
            fixed_translation: [0.4; 3],
            fixed_rotation_angle: FRAC_PI_2,
            angle_range: (-PI, PI),
            translation_range: (-half, half),
        }
    }
}

/// `n` equally spaced values with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i == n - 1 => hi,
            _ => lo + (hi - lo) * i as f64 / (n - 1) as f64,
        })
        .collect()
}

/// One synthetic test transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCase {
    pub step: usize,
    pub angle_rad: f64,
    pub translation: [f64; 3],
}

impl SweepCase {
    pub fn transform(&self, axis: &[f64; 3]) -> RigidTransform {
        RigidTransform::from_axis_angle(
            Vector3::from(*axis),
            self.angle_rad,
            Vector3::from(self.translation),
        )
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let norm = Vector3::from(self.axis).norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig(format!(
                "sweep axis must be a unit vector, norm is {norm}"
            )));
        }
        if self.n_steps < 2 {
            return Err(Error::BadConfig("a sweep needs at least 2 steps".into()));
        }
        Ok(())
    }

    pub fn rotation_cases(&self) -> Vec<SweepCase> {
        linspace(self.angle_range.0, self.angle_range.1, self.n_steps)
            .into_iter()
            .enumerate()
            .map(|(step, angle_rad)| SweepCase {
                step,
                angle_rad,
                translation: self.fixed_translation,
            })
            .collect()
    }

    pub fn translation_cases(&self) -> Vec<SweepCase> {
        linspace(
            self.translation_range.0,
            self.translation_range.1,
            self.n_steps,
        )
        .into_iter()
        .enumerate()
        .map(|(step, s)| SweepCase {
            step,
            angle_rad: self.fixed_rotation_angle,
            translation: self.axis.map(|a| s * a),
        })
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub case_id: String,
    /// Ground-truth rotation angle and translation, when known.
    pub angle_rad: Option<f64>,
    pub translation_mm: Option<[f64; 3]>,
    pub te_mm: Option<f64>,
    pub re_rad: Option<f64>,
    pub dsc: f64,
}

impl EvalRecord {
    pub fn has_ground_truth(&self) -> bool {
        self.te_mm.is_some()
    }
}

/// Predicts ground truth when it is supplied and identity otherwise. Used
/// to validate the evaluation harness independently of any learning.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl Predictor for OracleModel {
    fn predict(&self, _fixed: &Volume3, _moving: &Volume3) -> Result<TransformParams> {
        Ok(params_from_transform(&RigidTransform::identity()))
    }

    fn predict_with_truth(
        &self,
        fixed: &Volume3,
        moving: &Volume3,
        truth: Option<&TransformParams>,
    ) -> Result<TransformParams> {
        match truth {
            Some(t) => Ok(*t),
            None => self.predict(fixed, moving),
        }
    }
}

/// Warps `moving` onto the fixed grid by the inverse of `predicted`.
pub fn align(
    moving: &Volume3,
    fixed_dims: [usize; 3],
    predicted: &TransformParams,
) -> Result<Volume3> {
    Ok(resample_rigid(
        moving,
        &predicted.to_transform()?.invert(),
        fixed_dims,
        0.0,
    ))
}

/// TE and RE against `gt` when given, and DSC between the fixed mask and the
/// aligned moving mask at threshold `tau`.
pub fn evaluate_pair(
    model: &dyn Predictor,
    case_id: impl Into<String>,
    fixed: &Volume3,
    moving: &Volume3,
    gt: Option<&TransformParams>,
    tau: f32,
) -> Result<EvalRecord> {
    let pred = model.predict_with_truth(fixed, moving, gt)?;
    let aligned = align(moving, fixed.dims(), &pred)?;
    let dsc = dice(&binarize(fixed, tau), &binarize(&aligned, tau))?;
    let (mut te, mut re, mut angle, mut trans) = (None, None, None, None);
    if let Some(gt) = gt {
        let gt_tf = gt.to_transform()?;
        te = Some(translation_error(&gt.translation(), &pred.translation()));
        re = Some(rotation_error(&gt_tf.rotation, &pred.rotation_6d())?);
        angle = Some(crate::geom::rotation_angle(&gt_tf.rotation));
        trans = Some(gt.theta_t);
    }
    Ok(EvalRecord {
        case_id: case_id.into(),
        angle_rad: angle,
        translation_mm: trans,
        te_mm: te,
        re_rad: re,
        dsc,
    })
}

fn run_sweep(
    tag: &str,
    model: &dyn Predictor,
    volumes: &[Volume3],
    spec: &SweepSpec,
    cases: Vec<SweepCase>,
    synth: &SynthConfig,
    tau: f32,
) -> Result<Vec<EvalRecord>> {
    spec.validate()?;
    let jobs: Vec<_> = (0..volumes.len())
        .flat_map(|v| cases.iter().map(move |c| (v, *c)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(v, case))| {
            let tf = case.transform(&spec.axis);
            let mut rng = rng_for(synth.seed, i as u64);
            let pair = make_pair_with(&volumes[v], &tf, &mut rng, synth);
            let mut rec = evaluate_pair(
                model,
                format!("{tag}-{v:03}-{:02}", case.step),
                &pair.fixed,
                &pair.moving,
                Some(&pair.theta),
                tau,
            )?;
            // signed sweep angle rather than the geodesic magnitude
            rec.angle_rad = Some(case.angle_rad);
            Ok(rec)
        })
        .collect()
}

/// Rotations about `spec.axis` over `spec.angle_range` with a fixed
/// translation, applied to every volume.
pub fn rotation_sweep(
    model: &dyn Predictor,
    volumes: &[Volume3],
    spec: &SweepSpec,
    synth: &SynthConfig,
    tau: f32,
) -> Result<Vec<EvalRecord>> {
    run_sweep(
        "rot",
        model,
        volumes,
        spec,
        spec.rotation_cases(),
        synth,
        tau,
    )
}

/// Translations along `spec.axis` with a fixed rotation about it.
pub fn translation_sweep(
    model: &dyn Predictor,
    volumes: &[Volume3],
    spec: &SweepSpec,
    synth: &SynthConfig,
    tau: f32,
) -> Result<Vec<EvalRecord>> {
    run_sweep(
        "trans",
        model,
        volumes,
        spec,
        spec.translation_cases(),
        synth,
        tau,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            mean: self.mean * k,
            std: self.std * k,
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub te_mm: Option<Stat>,
    pub te_um: Option<Stat>,
    pub re_rad: Option<Stat>,
    pub re_deg: Option<Stat>,
    pub dsc: Stat,
}

pub fn summarize(records: &[EvalRecord]) -> Result<Summary> {
    let dsc =
        Stat::of(&records.iter().map(|r| r.dsc).collect::<Vec<_>>()).ok_or(Error::EmptyInput)?;
    let te = Stat::of(&records.iter().filter_map(|r| r.te_mm).collect::<Vec<_>>());
    let re = Stat::of(&records.iter().filter_map(|r| r.re_rad).collect::<Vec<_>>());
    Ok(Summary {
        n: records.len(),
        te_mm: te,
        te_um: te.map(|s| s.scaled(1000.0)),
        re_rad: re,
        re_deg: re.map(|s| s.scaled(180.0 / PI)),
        dsc,
    })
}

pub const REPORT_HEADER: &str = "case_id,angle_rad,tx_mm,ty_mm,tz_mm,te_mm,re_rad,dsc";

pub fn encode_report(records: &[EvalRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{REPORT_HEADER}\n");
    for r in records {
        let t = r.translation_mm.map(|t| t.map(Some)).unwrap_or([None; 3]);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.case_id,
            opt(r.angle_rad),
            opt(t[0]),
            opt(t[1]),
            opt(t[2]),
            opt(r.te_mm),
            opt(r.re_rad),
            r.dsc
        );
    }
    out
}

/// Writes the per-case CSV to `csv_path` and the summary JSON next to it
/// (same stem, `.json`), returning the summary.
pub fn write_report(records: &[EvalRecord], csv_path: &Path) -> Result<Summary> {
    let summary = summarize(records)?;
    fsutil::atomic_write(csv_path, encode_report(records).as_bytes())?;
    let json = serde_json::to_string_pretty(&summary)?;
    fsutil::atomic_write(&csv_path.with_extension("json"), json.as_bytes())?;
    Ok(summary)
}
