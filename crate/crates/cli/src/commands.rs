use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use voxalign::eval::{
    align, evaluate_pair, rotation_sweep, translation_sweep, write_report, EvalRecord, OracleModel,
};
use voxalign::fsutil::atomic_write;
use voxalign::geom::{params_from_transform, RigidTransform, TransformParams};
use voxalign::nets::{Model, Predictor};
use voxalign::synthgen::{
    gen_phantom, gen_phantom_pair, make_pair, read_manifest, rng_for, write_manifest,
    ManifestRecord,
};
use voxalign::train::{load_checkpoint, write_curve, DataStream, PairList, PhantomStream, Trainer};
use voxalign::volume::{read_volume, write_volume, Volume3};

use crate::config::{RunConfig, Source};

const MANIFEST: &str = "manifest.jsonl";

/// Manifest paths are stored relative to the manifest's folder.
fn resolve(manifest: &Path, p: &Path) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(p)
}

fn read_resolved(manifest: &Path) -> Result<Vec<ManifestRecord>> {
    let mut recs =
        read_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    for r in &mut recs {
        r.fixed_path = resolve(manifest, &r.fixed_path);
        r.moving_path = resolve(manifest, &r.moving_path);
    }
    Ok(recs)
}

pub fn gen(
    out: &Path,
    n: usize,
    size: usize,
    first_id: u64,
    contrast: bool,
    seed: u64,
) -> Result<()> {
    if n == 0 || size == 0 {
        bail!("--n and --size must be positive");
    }
    let identity = params_from_transform(&RigidTransform::identity());
    let mut records = Vec::with_capacity(n);
    for id in first_id..first_id + n as u64 {
        let mut rng = rng_for(seed, id);
        let plain_name = PathBuf::from(format!("subject_{id:04}.vol"));
        let moving_name = if contrast {
            let (plain, ce) = gen_phantom_pair(&mut rng, [size; 3]);
            let ce_name = PathBuf::from(format!("subject_{id:04}_ce.vol"));
            write_volume(&out.join(&plain_name), &plain)?;
            write_volume(&out.join(&ce_name), &ce)?;
            ce_name
        } else {
            write_volume(&out.join(&plain_name), &gen_phantom(&mut rng, [size; 3]))?;
            plain_name.clone()
        };
        records.push(ManifestRecord {
            fixed_path: plain_name,
            moving_path: moving_name,
            theta_r: identity.theta_r,
            theta_t: identity.theta_t,
            seed: id,
        });
    }
    write_manifest(&out.join(MANIFEST), &records)?;
    println!("wrote {n} subjects to {}", out.display());
    Ok(())
}

type FolderVolumes = (Vec<(u64, PathBuf)>, BTreeSet<u64>);

/// Volumes of one folder: the plain scan of each subject and, when asked
/// for, its contrast-enhanced counterpart.
fn folder_volumes(cfg: &RunConfig, folder: &str, with_contrast: bool) -> Result<FolderVolumes> {
    let recs = read_resolved(&cfg.data_dir.join(folder).join(MANIFEST))?;
    let mut out = Vec::new();
    for r in &recs {
        out.push((r.seed, r.fixed_path.clone()));
        if with_contrast && r.moving_path != r.fixed_path {
            out.push((r.seed, r.moving_path.clone()));
        }
    }
    Ok((out, recs.iter().map(|r| r.seed).collect()))
}

fn write_pairs(
    cfg: &RunConfig,
    name: &str,
    sources: &[(u64, PathBuf)],
    seed: u64,
) -> Result<usize> {
    let dir = cfg.pairs_dir();
    let mut records = Vec::new();
    for (vi, (subject, path)) in sources.iter().enumerate() {
        let v = read_volume(path)?;
        if v.dims() != cfg.arch.input_shape() {
            bail!(
                "{} is {:?}, the model expects {:?}",
                path.display(),
                v.dims(),
                cfg.arch.input_shape()
            );
        }
        for k in 0..cfg.pairs_per_volume {
            let index = (vi * cfg.pairs_per_volume + k) as u64;
            let pair = make_pair(&v, &mut rng_for(seed, index), &cfg.synth);
            let f = PathBuf::from(format!("{name}/pair_{index:05}_f.vol"));
            let m = PathBuf::from(format!("{name}/pair_{index:05}_m.vol"));
            write_volume(&dir.join(&f), &pair.fixed)?;
            write_volume(&dir.join(&m), &pair.moving)?;
            records.push(ManifestRecord {
                fixed_path: f,
                moving_path: m,
                theta_r: pair.theta.theta_r,
                theta_t: pair.theta.theta_t,
                seed: *subject,
            });
        }
    }
    write_manifest(&dir.join(format!("{name}.jsonl")), &records)?;
    Ok(records.len())
}

pub fn make_pairs(cfg: &RunConfig) -> Result<()> {
    let (train_folder, test_folder, train_contrast) = cfg.split.folders();
    let (train, train_ids) = folder_volumes(cfg, train_folder, train_contrast)?;
    let (test, test_ids) = folder_volumes(cfg, test_folder, true)?;
    if let Some(id) = train_ids.intersection(&test_ids).next() {
        bail!("subject {id} appears in both {train_folder} and {test_folder}");
    }
    let n_train = write_pairs(cfg, "train", &train, cfg.synth.seed)?;
    let n_test = write_pairs(cfg, "test", &test, cfg.synth.seed ^ 0x7e57)?;
    println!("{:?}: {n_train} training pairs from {train_folder}, {n_test} test pairs from {test_folder}", cfg.split);
    Ok(())
}

fn pair_list(cfg: &RunConfig, name: &str) -> Result<PairList> {
    let recs = read_resolved(&cfg.pairs_dir().join(format!("{name}.jsonl")))?;
    Ok(PairList::from_manifest(&recs)?)
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let shape = cfg.arch.input_shape();
    let online;
    let listed;
    let (stream, validation): (&dyn DataStream, Vec<_>) = match cfg.source {
        Source::Online => {
            online = PhantomStream::new(shape, cfg.synth.clone())?;
            let val = PhantomStream::held_out(
                shape,
                &cfg.synth,
                cfg.synth.seed.wrapping_add(1 << 32),
                cfg.validation_pairs,
            )?;
            (&online, val)
        }
        Source::Pairs => {
            listed = pair_list(cfg, "train")?;
            let test = pair_list(cfg, "test")?;
            (
                &listed,
                test.pairs.into_iter().take(cfg.validation_pairs).collect(),
            )
        }
    };
    let trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)
                .with_context(|| format!("resuming from {}", path.display()))?;
            if ck.model.config != cfg.arch {
                bail!("checkpoint architecture differs from the configured one");
            }
            Trainer::resume(ck, stream, cfg.train.clone(), cfg.loss)?
        }
        None => Trainer::new(
            Model::build(&cfg.arch, cfg.arch.seed)?,
            stream,
            cfg.train.clone(),
            cfg.loss,
        )?,
    };
    let mut trainer = trainer.with_validation(&validation);
    let ck_path = cfg.checkpoint_path();
    let result = trainer.run(Some(&ck_path));
    write_curve(&cfg.output_dir.join("curve.csv"), &trainer.curve)?;
    write_curve(&cfg.output_dir.join("validation.csv"), &trainer.validation)?;
    result.with_context(|| {
        format!(
            "training stopped; last good checkpoint is {}",
            ck_path.display()
        )
    })?;
    if let Some(last) = trainer.curve.last() {
        println!(
            "iteration {}: loss {:.6} te {:.4} mm re {:.4} rad",
            last.iteration, last.loss, last.te_mm, last.re_rad
        );
    }
    Ok(())
}

fn load_predictor(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    oracle: bool,
) -> Result<Box<dyn Predictor>> {
    if oracle {
        return Ok(Box::new(OracleModel));
    }
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.checkpoint_path());
    let ck = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Box::new(ck.model))
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<()> {
    let model = load_predictor(cfg, checkpoint, oracle)?;
    let shape = cfg.arch.input_shape();
    let volumes: Vec<Volume3> = (0..cfg.eval_volumes as u64)
        .map(|i| gen_phantom(&mut rng_for(cfg.synth.seed ^ 0xe7a1, i), shape))
        .collect();
    let reports = cfg.reports_dir();
    let mut runs: Vec<(&str, Vec<EvalRecord>)> = vec![
        (
            "rotation",
            rotation_sweep(
                model.as_ref(),
                &volumes,
                &cfg.sweep,
                &cfg.synth,
                cfg.dsc_tau,
            )?,
        ),
        (
            "translation",
            translation_sweep(
                model.as_ref(),
                &volumes,
                &cfg.sweep,
                &cfg.synth,
                cfg.dsc_tau,
            )?,
        ),
    ];
    if cfg.pairs_dir().join("test.jsonl").exists() {
        let test = pair_list(cfg, "test")?;
        let recs = test
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                evaluate_pair(
                    model.as_ref(),
                    format!("pair-{i:05}"),
                    &p.fixed,
                    &p.moving,
                    Some(&p.theta),
                    cfg.dsc_tau,
                )
            })
            .collect::<voxalign::Result<Vec<_>>>()?;
        runs.push(("pairs", recs));
    }
    for (name, recs) in &runs {
        let s = write_report(recs, &reports.join(format!("{name}.csv")))?;
        let te = s.te_um.map(|t| t.mean).unwrap_or(f64::NAN);
        let re = s.re_deg.map(|r| r.mean).unwrap_or(f64::NAN);
        println!(
            "{name:<12} n={:<4} TE {te:9.2} µm  RE {re:7.3}°  DSC {:.4}",
            s.n, s.dsc.mean
        );
    }
    Ok(())
}

pub fn register(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    oracle: bool,
    fixed: &Path,
    moving: &Path,
    out: &Path,
) -> Result<()> {
    let model = load_predictor(cfg, checkpoint, oracle)?;
    let f = read_volume(fixed)?;
    let m = read_volume(moving)?;
    let theta: TransformParams = model.predict(&f, &m)?;
    let aligned = align(&m, f.dims(), &theta)?;
    let json = serde_json::to_string_pretty(&theta)?;
    atomic_write(&out.with_extension("json"), json.as_bytes())?;
    write_volume(&out.with_extension("vol"), &aligned)?;
    println!("{json}");
    Ok(())
}

pub fn info(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let (model, iteration) = match checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            (ck.model, Some(ck.iteration))
        }
        None => (Model::<f32>::build(&cfg.arch, cfg.arch.seed)?, None),
    };
    println!("architecture: {}", model.config.kind);
    println!("parameters: {}", model.param_count());
    if let Some(it) = iteration {
        println!("iteration: {it}");
    }
    println!("{}", model.config.to_json()?);
    if checkpoint.is_none() {
        println!("{}", serde_json::to_string_pretty(cfg)?);
    }
    Ok(())
}
