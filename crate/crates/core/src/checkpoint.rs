//! Bit-exact binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AFNIO\0"  u32 version  u32 n  <n bytes of TOML config>
//! u64 payload_len  <payload>  u32 crc32(payload)
//! payload := u32 count, count x (u64 len, <len bytes of record>)
//! record  := u32 name_len, name, u8 dtype, u32 rank, rank x u64 dim, raw data
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{DType, Real, Tensor};
use crate::train::AdamConfig;

pub const MAGIC: &[u8; 6] = b"AFNIO\0";
pub const VERSION: u32 = 1;

/// Configuration text stored in the header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U64 { shape: Vec<usize>, data: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub data: RecordData,
}

impl Record {
    pub fn tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => RecordData::F32(t.cast()),
            _ => RecordData::F64(t.cast()),
        };
        Self { name: name.into(), data }
    }

    pub fn u64s(name: impl Into<String>, data: Vec<u64>) -> Self {
        Self { name: name.into(), data: RecordData::U64 { shape: vec![data.len()], data } }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        let name = self.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let (dtype, shape) = match &self.data {
            RecordData::F32(t) => (DType::F32, t.shape().to_vec()),
            RecordData::F64(t) => (DType::F64, t.shape().to_vec()),
            RecordData::U64 { shape, .. } => (DType::U64, shape.clone()),
        };
        out.push(dtype as u8);
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in &shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        match &self.data {
            RecordData::F32(t) => t.data().iter().for_each(|v| v.write_le(out)),
            RecordData::F64(t) => t.data().iter().for_each(|v| v.write_le(out)),
            RecordData::U64 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Corrupt("record name is not UTF-8".into()))?;
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Corrupt(format!("unknown dtype tag {tag}")))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corrupt(format!("record `{name}` has an oversized shape")))?;
        let raw = r.take(count.checked_mul(dtype.size()).ok_or(Error::Truncated)?)?;
        if !r.is_empty() {
            return Err(Error::Corrupt(format!("record `{name}` has trailing bytes")));
        }
        let data = match dtype {
            DType::F32 => RecordData::F32(Tensor::new(&shape, raw.chunks(4).map(f32::read_le).collect())?),
            DType::F64 => RecordData::F64(Tensor::new(&shape, raw.chunks(8).map(f64::read_le).collect())?),
            DType::U64 => RecordData::U64 {
                shape,
                data: raw.chunks(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            },
            DType::U8 => return Err(Error::Corrupt(format!("record `{name}` has unsupported dtype u8"))),
        };
        Ok(Self { name, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
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
}

/// A parsed checkpoint: header config plus ordered records.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub meta: CheckpointMeta,
    pub records: Vec<Record>,
}

impl CheckpointFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = toml::to_string(&self.meta).map_err(|e| Error::Config(e.to_string()))?;
        let mut payload = Vec::new();
        payload.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        let mut rec = Vec::new();
        for r in &self.records {
            rec.clear();
            r.encode(&mut rec);
            payload.extend_from_slice(&(rec.len() as u64).to_le_bytes());
            payload.extend_from_slice(&rec);
        }
        let mut out = Vec::with_capacity(payload.len() + config.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len()).map_err(|_| Error::BadMagic)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Corrupt("config text is not UTF-8".into()))?;
        let payload_len = usize::try_from(r.u64()?).map_err(|_| Error::Truncated)?;
        let payload = r.take(payload_len)?;
        let stored = r.u32()?;
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        if !r.is_empty() {
            return Err(Error::Corrupt("trailing bytes after checksum".into()));
        }
        let meta: CheckpointMeta = toml::from_str(text).map_err(|e| Error::Corrupt(format!("config: {e}")))?;

        let mut p = Reader::new(payload);
        let count = p.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = usize::try_from(p.u64()?).map_err(|_| Error::Truncated)?;
            records.push(Record::decode(p.take(len)?)?);
        }
        if !p.is_empty() {
            return Err(Error::Corrupt("trailing bytes in payload".into()));
        }
        Ok(Self { meta, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn record(&self, name: &str) -> Result<&RecordData> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.data)
            .ok_or_else(|| Error::Corrupt(format!("missing record `{name}`")))
    }

    /// Rejects a checkpoint whose model config differs from `expected`,
    /// naming the first differing field.
    pub fn check_model(&self, expected: &ModelConfig) -> Result<()> {
        let a = toml::Value::try_from(expected).map_err(|e| Error::Config(e.to_string()))?;
        let b = toml::Value::try_from(&self.meta.model).map_err(|e| Error::Config(e.to_string()))?;
        match first_difference(&a, &b, "model") {
            Some(field) => Err(Error::ConfigMismatch { field }),
            None => Ok(()),
        }
    }
}

/// Dotted path of the first differing leaf, in key order.
pub fn first_difference(a: &toml::Value, b: &toml::Value, path: &str) -> Option<String> {
    use toml::Value;
    match (a, b) {
        (Value::Table(x), Value::Table(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| match (x.get(k), y.get(k)) {
                (Some(u), Some(v)) => first_difference(u, v, &format!("{path}.{k}")),
                _ => Some(format!("{path}.{k}")),
            })
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Some(path.to_string());
            }
            x.iter().zip(y).enumerate().find_map(|(i, (u, v))| first_difference(u, v, &format!("{path}[{i}]")))
        }
        _ => (a != b).then(|| path.to_string()),
    }
}
