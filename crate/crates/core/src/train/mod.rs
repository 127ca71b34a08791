//! Loss, momentum-SGD training loop, learning curves and checkpoints.

mod checkpoint;
mod data;
mod loss;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use data::{DataStream, PairList, PhantomStream};
pub use loss::{loss, loss_node, LossConfig};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, SgdMomentum};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::geom::{rotation_error, translation_error, TransformParams};
use crate::nets::Model;
use crate::synthgen::SyntheticPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: u64,
    /// Evaluate the validation set every this many iterations (0 disables).
    pub validation_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            momentum: 0.9,
            iterations: 5000,
            batch_size: 4,
            seed: 0,
            checkpoint_interval: 500,
            validation_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::BadConfig(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::BadConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One point of a learning curve: mean loss, TE (mm) and RE (rad) over a
/// batch or an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: u64,
    pub loss: f64,
    pub te_mm: f64,
    pub re_rad: f64,
}

pub const CURVE_HEADER: &str = "iteration,loss,te_mm,re_rad";

pub fn encode_curve(records: &[CurveRecord]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.loss, r.te_mm, r.re_rad);
    }
    out
}

pub fn write_curve(path: &Path, records: &[CurveRecord]) -> Result<()> {
    fsutil::atomic_write(path, encode_curve(records).as_bytes())
}

/// Mean TE and RE of predictions against ground truth. A degenerate
/// rotation prediction counts as the worst possible angle, π.
pub fn batch_errors(targets: &[TransformParams], preds: &[[f64; 12]]) -> (f64, f64) {
    let n = targets.len().max(1) as f64;
    let mut te = 0.0;
    let mut re = 0.0;
    for (t, p) in targets.iter().zip(preds) {
        let hat = TransformParams::from_slice(p).expect("12 outputs");
        te += translation_error(&t.translation(), &hat.translation());
        let r = t.to_transform().map(|tf| tf.rotation);
        re += r
            .and_then(|r| rotation_error(&r, &hat.rotation_6d()))
            .unwrap_or(std::f64::consts::PI);
    }
    (te / n, re / n)
}

/// Mean loss, TE and RE of a batch, plus parameter gradients when requested.
type BatchOutcome = (f64, f64, f64, Option<Vec<crate::autodiff::Tensor<f32>>>);

fn run_batch(
    model: &Model<f32>,
    pairs: &[&SyntheticPair],
    loss_cfg: &LossConfig,
    with_grads: bool,
) -> Result<BatchOutcome> {
    let fixed: Vec<_> = pairs.iter().map(|p| &p.fixed).collect();
    let moving: Vec<_> = pairs.iter().map(|p| &p.moving).collect();
    let targets: Vec<_> = pairs.iter().map(|p| p.theta).collect();
    let mut g = Graph::new();
    let f = g.input(model.batch_tensor(&fixed)?);
    let m = g.input(model.batch_tensor(&moving)?);
    let out = model.forward(&mut g, f, m)?;
    let l = loss_node(&mut g, out, &targets, loss_cfg)?;
    let loss = g.value(l).data()[0] as f64;
    let preds: Vec<[f64; 12]> = g
        .value(out)
        .to_f64_vec()
        .chunks(12)
        .map(|c| c.try_into().expect("12 outputs"))
        .collect();
    let (te, re) = batch_errors(&targets, &preds);
    let grads = if with_grads && loss.is_finite() {
        Some(g.backward(l)?.param_grads(&model.params))
    } else {
        None
    };
    Ok((loss, te, re, grads))
}

/// Mean loss, TE and RE of `model` over `pairs`, evaluated in chunks of
/// `batch_size`.
pub fn evaluate_set(
    model: &Model<f32>,
    pairs: &[SyntheticPair],
    loss_cfg: &LossConfig,
    batch_size: usize,
) -> Result<CurveRecord> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut loss, mut te, mut re) = (0.0, 0.0, 0.0);
    for chunk in pairs.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let (l, t, r, _) = run_batch(model, &refs, loss_cfg, false)?;
        let w = chunk.len() as f64;
        loss += l * w;
        te += t * w;
        re += r * w;
    }
    let n = pairs.len() as f64;
    Ok(CurveRecord {
        iteration: 0,
        loss: loss / n,
        te_mm: te / n,
        re_rad: re / n,
    })
}

/// Training state: model, optimizer, position in the data stream and the
/// curves recorded so far.
pub struct Trainer<'a> {
    pub model: Model<f32>,
    pub optimizer: SgdMomentum<f32>,
    pub config: TrainConfig,
    pub loss: LossConfig,
    pub iteration: u64,
    pub curve: Vec<CurveRecord>,
    pub validation: Vec<CurveRecord>,
    stream: &'a dyn DataStream,
    validation_set: &'a [SyntheticPair],
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Model<f32>,
        stream: &'a dyn DataStream,
        config: TrainConfig,
        loss: LossConfig,
    ) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        Ok(Self {
            optimizer: SgdMomentum::new(&model.params, config.lr, config.momentum),
            model,
            config,
            loss,
            iteration: 0,
            curve: Vec::new(),
            validation: Vec::new(),
            stream,
            validation_set: &[],
        })
    }

    /// Continues a run from a checkpoint.
    pub fn resume(
        ck: Checkpoint,
        stream: &'a dyn DataStream,
        config: TrainConfig,
        loss: LossConfig,
    ) -> Result<Self> {
        let mut t = Self::new(ck.model, stream, config, loss)?;
        t.optimizer.velocity = ck.velocity;
        t.iteration = ck.iteration;
        t.curve = ck.curve;
        t.validation = ck.validation;
        Ok(t)
    }

    pub fn with_validation(mut self, pairs: &'a [SyntheticPair]) -> Self {
        self.validation_set = pairs;
        self
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            model: self.model.clone(),
            velocity: self.optimizer.velocity.clone(),
            curve: self.curve.clone(),
            validation: self.validation.clone(),
        }
    }

    /// One momentum-SGD update on the batch for the current iteration.
    /// Parameters are left untouched if the loss or gradients are not finite.
    pub fn step(&mut self) -> Result<CurveRecord> {
        let it = self.iteration;
        let bs = self.config.batch_size;
        let pairs = (0..bs)
            .map(|s| self.stream.sample(it, s, bs))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = pairs.iter().collect();
        let (loss, te_mm, re_rad, grads) = run_batch(&self.model, &refs, &self.loss, true)?;
        let grads = grads.filter(|gs| gs.iter().all(|g| g.data().iter().all(|v| v.is_finite())));
        let Some(grads) = grads else {
            return Err(Error::DivergenceDetected {
                iteration: it,
                loss,
            });
        };
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.iteration += 1;
        let rec = CurveRecord {
            iteration: it,
            loss,
            te_mm,
            re_rad,
        };
        self.curve.push(rec);
        Ok(rec)
    }

    pub fn validate_now(&mut self) -> Result<Option<CurveRecord>> {
        if self.validation_set.is_empty() {
            return Ok(None);
        }
        let mut rec = evaluate_set(
            &self.model,
            self.validation_set,
            &self.loss,
            self.config.batch_size,
        )?;
        rec.iteration = self.iteration;
        self.validation.push(rec);
        Ok(Some(rec))
    }

    /// Trains up to `config.iterations`, validating and checkpointing at the
    /// configured intervals (plus a final checkpoint). Validation points
    /// depend only on the iteration number, so a resumed run records the
    /// same curve as an uninterrupted one. On divergence the most recent checkpoint on
    /// disk is the last good state.
    pub fn run(&mut self, checkpoint_path: Option<&Path>) -> Result<()> {
        while self.iteration < self.config.iterations {
            self.step()?;
            let it = self.iteration;
            let vi = self.config.validation_interval;
            if vi > 0 && it.is_multiple_of(vi) {
                self.validate_now()?;
            }
            let ci = self.config.checkpoint_interval;
            if let Some(path) = checkpoint_path {
                if (ci > 0 && it.is_multiple_of(ci)) || it == self.config.iterations {
                    save_checkpoint(path, &self.checkpoint())?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{ArchConfig, ArchKind};
    use crate::synthgen::SynthConfig;

    fn tiny() -> ArchConfig {
        ArchConfig::assemble(
            ArchKind::Dnet,
            vec![[8; 3], [4; 3], [2; 3], [1; 3]],
            vec![1, 4, 4, 4],
            1,
            2,
        )
    }

    fn stream() -> PhantomStream {
        PhantomStream::new([8; 3], SynthConfig::default()).unwrap()
    }

    fn cfg(iterations: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 2,
            checkpoint_interval: 3,
            validation_interval: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = stream();
        let model = Model::build(&tiny(), 1).unwrap();
        let before = model.params.clone();
        let mut t = Trainer::new(
            model,
            &s,
            TrainConfig { lr: 0.0, ..cfg(4) },
            LossConfig::default(),
        )
        .unwrap();
        t.run(None).unwrap();
        for (a, b) in t.model.params.tensors().iter().zip(before.tensors()) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(t.curve.len(), 4);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let s = stream();
        let val = PhantomStream::held_out([8; 3], &SynthConfig::default(), 99, 3).unwrap();
        let model = Model::build(&tiny(), 2).unwrap();
        let mut full = Trainer::new(model.clone(), &s, cfg(6), LossConfig::default())
            .unwrap()
            .with_validation(&val);
        full.run(None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut first = Trainer::new(model, &s, cfg(3), LossConfig::default())
            .unwrap()
            .with_validation(&val);
        first.run(Some(&path)).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.iteration, 3);
        let mut second = Trainer::resume(ck, &s, cfg(6), LossConfig::default())
            .unwrap()
            .with_validation(&val);
        second.run(None).unwrap();

        assert_eq!(encode_curve(&second.curve), encode_curve(&full.curve));
        assert_eq!(
            encode_curve(&second.validation),
            encode_curve(&full.validation)
        );
        assert_eq!(
            encode_checkpoint(&second.checkpoint()).unwrap(),
            encode_checkpoint(&full.checkpoint()).unwrap()
        );
    }

    #[test]
    fn divergence_is_reported_without_updating() {
        let s = stream();
        let mut model = Model::build(&tiny(), 3).unwrap();
        model.params.tensors_mut()[0].data_mut()[0] = f32::NAN;
        let before = model.params.clone();
        let mut t = Trainer::new(model, &s, cfg(2), LossConfig::default()).unwrap();
        assert!(matches!(
            t.step(),
            Err(Error::DivergenceDetected { iteration: 0, .. })
        ));
        assert_eq!(t.iteration, 0);
        assert_eq!(t.model.params.tensors()[1], before.tensors()[1]);
    }

    #[test]
    fn curve_csv_layout() {
        let text = encode_curve(&[CurveRecord {
            iteration: 2,
            loss: 0.5,
            te_mm: 0.25,
            re_rad: 1.0,
        }]);
        assert_eq!(text, "iteration,loss,te_mm,re_rad\n2,0.5,0.25,1\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            momentum: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
