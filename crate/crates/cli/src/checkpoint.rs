//! RKPT binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RKPT" | version u32 | param count u32 | param records
//!        | optimizer record count u32 | optimizer records | FNV-1a 64 of everything before
//! record = name len u16 | UTF-8 name | rank u8 | dims u64 × rank | dtype u8 | payload
//! ```
//!
//! Dtype tags: 1 = f32, 2 = f64, 3 = u64. Optimizer records are named
//! `opt.t` (the step counter, `[1]` u64) and `opt.<slot>.<param>`.

use std::path::Path;

use recurrent::optim::{OptimizerKind, OptimizerState};
use recurrent::train::Trainer;
use recurrent::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"RKPT";
pub const VERSION: u32 = 1;

const TAG_F32: u8 = 1;
const TAG_F64: u8 = 2;
const TAG_U64: u8 = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("parameter `{name}` does not match: {detail}")]
    Manifest { name: String, detail: String },
    #[error("checkpoint i/o: {0}")]
    Io(String),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => TAG_F32,
            Payload::F64(_) => TAG_F64,
            Payload::U64(_) => TAG_U64,
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            Payload::F32(_) => "f32",
            Payload::F64(_) => "f64",
            Payload::U64(_) => "u64",
        }
    }

    fn from_tensor<T: Real>(t: &Tensor<T>) -> Payload {
        match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()),
            DType::F64 => Payload::F64(t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()),
        }
    }

    /// `None` when the payload's dtype is not `T`'s or its length is not `shape`'s.
    fn to_tensor<T: Real>(&self, shape: &[usize]) -> Option<Tensor<T>> {
        let data: Vec<T> = match (self, T::DTYPE) {
            (Payload::F32(v), DType::F32) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            (Payload::F64(v), DType::F64) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            _ => return None,
        };
        Tensor::from_vec(shape, data).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<Record>,
    pub optimizer: Vec<Record>,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn write_record(out: &mut Vec<u8>, r: &Record) {
    out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
    out.extend_from_slice(r.name.as_bytes());
    out.push(r.shape.len() as u8);
    for &d in &r.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(r.payload.tag());
    match &r.payload {
        Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<Record, CheckpointError> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| corrupt("record name is not UTF-8"))?
            .to_string();
        let rank = self.u8()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt(format!("record `{name}` is too large")))?;
        let payload = match self.u8()? {
            TAG_F32 => Payload::F32(
                self.take(count.saturating_mul(4))?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            TAG_F64 => Payload::F64(
                self.take(count.saturating_mul(8))?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            TAG_U64 => Payload::U64(
                self.take(count.saturating_mul(8))?
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            other => return Err(corrupt(format!("record `{name}` has unknown dtype tag {other}"))),
        };
        Ok(Record { name, shape, payload })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for r in &self.params {
            write_record(&mut out, r);
        }
        out.extend_from_slice(&(self.optimizer.len() as u32).to_le_bytes());
        for r in &self.optimizer {
            write_record(&mut out, r);
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Verifies the checksum before interpreting anything else.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < MAGIC.len() + 4 + 4 + 4 + 8 {
            return Err(corrupt(format!("file is only {} bytes", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let actual = fnv1a64(body);
        if stored != actual {
            return Err(corrupt(format!("checksum {stored:016x} != computed {actual:016x}")));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let n = r.u32()?;
        let params = (0..n).map(|_| r.record()).collect::<Result<Vec<_>, _>>()?;
        let m = r.u32()?;
        let optimizer = (0..m).map(|_| r.record()).collect::<Result<Vec<_>, _>>()?;
        if r.pos != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Parameters (manifest names) followed by the optimizer block.
    pub fn capture<T: Real>(trainer: &Trainer<T>) -> Checkpoint {
        let model = trainer.model();
        let manifest = model.manifest();
        let params = manifest
            .iter()
            .zip(model.parameters())
            .map(|(spec, t)| Record {
                name: spec.name.clone(),
                shape: t.shape().to_vec(),
                payload: Payload::from_tensor(t),
            })
            .collect();
        let opt = trainer.optimizer();
        let mut optimizer = vec![Record {
            name: "opt.t".into(),
            shape: vec![1],
            payload: Payload::U64(vec![opt.step_count()]),
        }];
        for (slot, tensors) in opt.slots() {
            for (spec, t) in manifest.iter().zip(tensors) {
                optimizer.push(Record {
                    name: format!("opt.{slot}.{}", spec.name),
                    shape: t.shape().to_vec(),
                    payload: Payload::from_tensor(t),
                });
            }
        }
        Checkpoint { params, optimizer }
    }

    /// First parameter whose name, shape or dtype differs from the model's
    /// manifest, in manifest order.
    pub fn check_manifest<T: Real>(&self, trainer: &Trainer<T>) -> Result<(), CheckpointError> {
        let manifest = trainer.model().manifest();
        for (i, spec) in manifest.iter().enumerate() {
            let Some(rec) = self.params.get(i) else {
                return Err(CheckpointError::Manifest {
                    name: spec.name.clone(),
                    detail: "missing from checkpoint".into(),
                });
            };
            let detail = if rec.name != spec.name {
                Some(format!("checkpoint has `{}` in its place", rec.name))
            } else if rec.shape != spec.shape {
                Some(format!("shape {:?} in checkpoint, {:?} expected", rec.shape, spec.shape))
            } else if rec.payload.to_tensor::<T>(&rec.shape).is_none() {
                Some(format!("dtype {} in checkpoint, {} expected", rec.payload.dtype_name(), T::DTYPE.name()))
            } else {
                None
            };
            if let Some(detail) = detail {
                return Err(CheckpointError::Manifest {
                    name: spec.name.clone(),
                    detail,
                });
            }
        }
        if let Some(extra) = self.params.get(manifest.len()) {
            return Err(CheckpointError::Manifest {
                name: extra.name.clone(),
                detail: "not part of the configured model".into(),
            });
        }
        Ok(())
    }

    /// Loads parameters and optimizer state into `trainer`.
    pub fn restore<T: Real>(&self, trainer: &mut Trainer<T>) -> Result<(), CheckpointError> {
        self.check_manifest(trainer)?;
        let params = self
            .params
            .iter()
            .map(|r| {
                r.payload
                    .to_tensor::<T>(&r.shape)
                    .ok_or_else(|| corrupt(format!("record `{}` payload does not match its shape", r.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let optimizer = self.optimizer_state(trainer.config().optimizer, trainer)?;
        trainer
            .load_state(params, optimizer)
            .map_err(|e| corrupt(e.to_string()))
    }

    fn optimizer_state<T: Real>(
        &self,
        kind: OptimizerKind,
        trainer: &Trainer<T>,
    ) -> Result<OptimizerState<T>, CheckpointError> {
        let manifest = trainer.model().manifest();
        let mut records = self.optimizer.iter();
        let t = match records.next() {
            Some(Record { name, shape, payload: Payload::U64(v) }) if name == "opt.t" && shape == &[1] => v[0],
            _ => return Err(corrupt("optimizer block must start with `opt.t`")),
        };
        let expected = OptimizerState::<T>::new(kind, &[]).map_err(|e| corrupt(e.to_string()))?;
        let mut slots = Vec::new();
        for (slot, _) in expected.slots() {
            let mut tensors = Vec::new();
            for spec in &manifest {
                let want = format!("opt.{slot}.{}", spec.name);
                let rec = records
                    .next()
                    .filter(|r| r.name == want)
                    .ok_or_else(|| corrupt(format!("optimizer record `{want}` is missing")))?;
                let t = rec
                    .payload
                    .to_tensor::<T>(&spec.shape)
                    .filter(|_| rec.shape == spec.shape)
                    .ok_or_else(|| corrupt(format!("optimizer record `{want}` has the wrong shape or dtype")))?;
                tensors.push(t);
            }
            slots.push(tensors);
        }
        if let Some(extra) = records.next() {
            return Err(corrupt(format!("unexpected optimizer record `{}`", extra.name)));
        }
        let shapes: Vec<&[usize]> = manifest.iter().map(|s| s.shape.as_slice()).collect();
        OptimizerState::restore(kind, &shapes, t, slots).map_err(|e| corrupt(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: vec![
                Record {
                    name: "W".into(),
                    shape: vec![2, 2],
                    payload: Payload::F64(vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]),
                },
                Record {
                    name: "b".into(),
                    shape: vec![2],
                    payload: Payload::F32(vec![0.25, 1e-30]),
                },
            ],
            optimizer: vec![Record {
                name: "opt.t".into(),
                shape: vec![1],
                payload: Payload::U64(vec![7]),
            }],
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"RKPT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // first record: name "W"
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 1);
        assert_eq!(bytes[14], b'W');
        assert_eq!(bytes[15], 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes[32], TAG_F64);
        assert_eq!(f64::from_le_bytes(bytes[33..41].try_into().unwrap()), 1.0);
        let n = bytes.len();
        assert_eq!(u64::from_le_bytes(bytes[n - 8..].try_into().unwrap()), fnv1a64(&bytes[..n - 8]));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        match &back.params[0].payload {
            Payload::F64(v) => assert!(v[1].is_sign_negative()),
            _ => panic!(),
        }
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = sample().to_bytes();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Corrupt(_))), "byte {i}");
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for n in 0..bytes.len() {
            assert!(Checkpoint::from_bytes(&bytes[..n]).is_err(), "length {n}");
        }
    }
}
