//! Binary checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "UKAN" | version u32 | endianness u8 (1 = little) | dtype u8
//! config: len u64 + UTF-8 TOML
//! epoch u64 | step u64 | seed u64 | has_best u8 | best f64
//! adam: step u64 | beta1 f64 | beta2 f64 | eps f64
//! records: count u64, then per tensor
//!   name_len u32 | name | role u8 | dtype u8 | ndim u32 | dims u64.. | data
//! ```
//!
//! Roles: 0 parameter, 1 buffer, 2 Adam first moment, 3 Adam second moment.
//! Every random stream of a run is derived from `(seed, epoch)`, so those two
//! fields are the generator state.

use std::fs;
use std::path::Path;

use ukan_core::{DType, ParamStore, Scalar, Tensor};

use crate::error::{Result, TrainError};
use crate::optim::{Adam, AdamConfig};

pub const MAGIC: &[u8; 4] = b"UKAN";
pub const VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Param => 0,
            Role::Buffer => 1,
            Role::AdamM => 2,
            Role::AdamV => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Role::Param, Role::Buffer, Role::AdamM, Role::AdamV].into_iter().find(|r| r.code() == c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub name: String,
    pub role: Role,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: String,
    /// Completed epochs.
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    pub best: Option<f64>,
    pub adam_step: u64,
    pub adam: AdamConfig,
    pub records: Vec<Record<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(config: String, epoch: u64, step: u64, seed: u64, best: Option<f64>, store: &ParamStore<T>, adam: &Adam<T>) -> Self {
        let mut records: Vec<Record<T>> = store
            .entries()
            .map(|(_, e)| Record {
                name: e.name.clone(),
                role: if e.trainable { Role::Param } else { Role::Buffer },
                tensor: (*e.value).clone(),
            })
            .collect();
        for (k, &id) in adam.ids.iter().enumerate() {
            let name = &store.entry(id).name;
            records.push(Record { name: name.clone(), role: Role::AdamM, tensor: adam.m[k].clone() });
            records.push(Record { name: name.clone(), role: Role::AdamV, tensor: adam.v[k].clone() });
        }
        Self { config, epoch, step, seed, best, adam_step: adam.step, adam: adam.config, records }
    }

    /// Copies tensors and optimizer state into a store built from the same
    /// configuration. Names, order and shapes must match exactly.
    pub fn restore(&self, store: &mut ParamStore<T>, adam: &mut Adam<T>) -> Result<()> {
        let mismatch = |d: String| TrainError::Checkpoint { path: "<checkpoint>".into(), detail: d };
        let model: Vec<&Record<T>> = self.records.iter().filter(|r| matches!(r.role, Role::Param | Role::Buffer)).collect();
        if model.len() != store.len() {
            return Err(mismatch(format!("{} tensors in checkpoint, model has {}", model.len(), store.len())));
        }
        let ids: Vec<_> = store.entries().map(|(id, _)| id).collect();
        for (rec, id) in model.iter().zip(&ids) {
            let e = store.entry(*id);
            if e.name != rec.name || e.trainable != (rec.role == Role::Param) || e.value.shape() != rec.tensor.shape() {
                return Err(mismatch(format!(
                    "{} {:?} does not match model tensor {} {:?}",
                    rec.name,
                    rec.tensor.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        for (rec, id) in model.iter().zip(&ids) {
            store.set(*id, rec.tensor.clone())?;
        }
        let mut fresh = Adam::new(store, self.adam);
        for role in [Role::AdamM, Role::AdamV] {
            let moments: Vec<&Record<T>> = self.records.iter().filter(|r| r.role == role).collect();
            if moments.len() != fresh.ids.len() {
                return Err(mismatch(format!("{} optimizer moments for {} parameters", moments.len(), fresh.ids.len())));
            }
            for (k, rec) in moments.into_iter().enumerate() {
                let id = fresh.ids[k];
                if store.entry(id).name != rec.name || store.get(id).shape() != rec.tensor.shape() {
                    return Err(mismatch(format!("optimizer moment {} does not match {}", rec.name, store.entry(id).name)));
                }
                match role {
                    Role::AdamM => fresh.m[k] = rec.tensor.clone(),
                    _ => fresh.v[k] = rec.tensor.clone(),
                }
            }
        }
        fresh.step = self.adam_step;
        *adam = fresh;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(LITTLE_ENDIAN);
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        for v in [self.epoch, self.step, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.best.is_some() as u8);
        out.extend_from_slice(&self.best.unwrap_or(0.0).to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        for v in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.role.code());
            out.push(T::DTYPE.code());
            out.extend_from_slice(&(r.tensor.ndim() as u32).to_le_bytes());
            for &d in r.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in r.tensor.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(r.fail("not a U-KAN checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(&format!("unsupported format version {version}")));
        }
        if r.u8()? != LITTLE_ENDIAN {
            return Err(r.fail("unsupported endianness flag"));
        }
        let dtype = r.dtype()?;
        if dtype != T::DTYPE {
            return Err(r.fail(&format!("stored as {}, requested {}", dtype.name(), T::DTYPE.name())));
        }
        let n = r.u64()? as usize;
        let config = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.fail("config is not UTF-8"))?;
        let (epoch, step, seed) = (r.u64()?, r.u64()?, r.u64()?);
        let has_best = r.u8()? != 0;
        let best = r.f64()?;
        let adam_step = r.u64()?;
        let adam = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
        let count = r.u64()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("tensor name is not UTF-8"))?;
            let role = Role::from_code(r.u8()?).ok_or_else(|| r.fail("unknown tensor role"))?;
            if r.dtype()? != T::DTYPE {
                return Err(r.fail(&format!("{name}: mixed dtypes")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let size = T::DTYPE.size();
            let raw = r.take(numel.checked_mul(size).ok_or_else(|| r.fail("tensor too large"))?)?;
            let data = raw.chunks_exact(size).map(T::read_le).collect();
            records.push(Record { name, role, tensor: Tensor::new(shape, data)? });
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Self { config, epoch, step, seed, best: has_best.then_some(best), adam_step, adam, records })
    }

    /// Writes to a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| TrainError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, detail: &str) -> TrainError {
        TrainError::Checkpoint { path: self.origin.to_path_buf(), detail: format!("{detail} (at byte {})", self.pos) }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.fail("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn dtype(&mut self) -> Result<DType> {
        let c = self.u8()?;
        DType::from_code(c).ok_or_else(|| self.fail(&format!("unknown dtype code {c}")))
    }
}
