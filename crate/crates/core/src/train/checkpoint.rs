//! Binary checkpoint: little-endian, magic `DNCK`, then
//!
//! ```text
//! u32 version | u64 iteration | u32 len + architecture JSON
//! u32 count | per parameter: u32 len + name, u32 ndim, u32 dims…, f32 data
//! per parameter: f32 velocity data (same shapes)
//! u32 count + training curve | u32 count + validation curve
//!     (each record: u64 iteration, f64 loss, f64 te_mm, f64 re_rad)
//! u64 checksum: first 8 bytes of SHA-256 over everything before it
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::CurveRecord;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::nets::{ArchConfig, Model};

const MAGIC: &[u8; 4] = b"DNCK";
const VERSION: u32 = 1;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: u64,
    pub model: Model<f32>,
    pub velocity: Vec<Tensor<f32>>,
    pub curve: Vec<CurveRecord>,
    pub validation: Vec<CurveRecord>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u32).to_le_bytes());
}

fn put_curve(out: &mut Vec<u8>, curve: &[CurveRecord]) {
    put_u32(out, curve.len());
    for r in curve {
        out.extend(r.iteration.to_le_bytes());
        for v in [r.loss, r.te_mm, r.re_rad] {
            out.extend(v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend(ck.iteration.to_le_bytes());
    let json = serde_json::to_vec(&ck.model.config)?;
    put_u32(&mut out, json.len());
    out.extend(json);
    let params = &ck.model.params;
    if ck.velocity.len() != params.len() {
        return Err(Error::shape(format!(
            "{} velocities for {} parameters",
            ck.velocity.len(),
            params.len()
        )));
    }
    put_u32(&mut out, params.len());
    for (_, name, t) in params.iter() {
        put_u32(&mut out, name.len());
        out.extend(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        out.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    for (v, t) in ck.velocity.iter().zip(params.tensors()) {
        if v.shape() != t.shape() {
            return Err(Error::shape(format!(
                "velocity {:?} for parameter {:?}",
                v.shape(),
                t.shape()
            )));
        }
        out.extend(v.data().iter().flat_map(|x| x.to_le_bytes()));
    }
    put_curve(&mut out, &ck.curve);
    put_curve(&mut out, &ck.validation);
    let sum = checksum(&out);
    out.extend(sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn curve(&mut self) -> Result<Vec<CurveRecord>> {
        let n = self.u32()?;
        (0..n)
            .map(|_| {
                Ok(CurveRecord {
                    iteration: self.u64()?,
                    loss: self.f64()?,
                    te_mm: self.f64()?,
                    re_rad: self.f64()?,
                })
            })
            .collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 4,
    };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let iteration = r.u64()?;
    let json_len = r.u32()?;
    let json = std::str::from_utf8(r.take(json_len)?)
        .map_err(|e| corrupt(format!("config is not UTF-8: {e}")))?;
    let config = ArchConfig::from_json(json).map_err(|e| corrupt(format!("config: {e}")))?;
    let mut model = Model::<f32>::build(&config, config.seed)?;
    let n = r.u32()?;
    if n != model.params.len() {
        return Err(corrupt(format!(
            "{n} parameters stored, architecture has {}",
            model.params.len()
        )));
    }
    for i in 0..n {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| corrupt(format!("parameter name: {e}")))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let id = crate::autodiff::ParamId(i);
        if model.params.name(id) != name || model.params.get(id).shape() != shape.as_slice() {
            return Err(corrupt(format!(
                "parameter {i} is {name} {shape:?}, expected {} {:?}",
                model.params.name(id),
                model.params.get(id).shape()
            )));
        }
        let data = r.f32s(model.params.get(id).len())?;
        *model.params.get_mut(id) = Tensor::new(shape, data)?;
    }
    let velocity = model
        .params
        .tensors()
        .iter()
        .map(|t| Tensor::new(t.shape().to_vec(), r.f32s(t.len())?))
        .collect::<Result<Vec<_>>>()?;
    let curve = r.curve()?;
    let validation = r.curve()?;
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        iteration,
        model,
        velocity,
        curve,
        validation,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fsutil::atomic_write(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fsutil::read(path)?)
}
