//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VANF" | version u32 | total_len u64 | record_count u32 | record*
//! record = name_len u32 | name (UTF-8) | dtype u8 | rank u32 | extents u64 × rank | payload
//! ```
//!
//! `dtype` is 0 for f32, 1 for f64 and 2 for u64. `total_len` counts the whole file.

use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::scalar::{DType, Real};

pub const MAGIC: &[u8; 4] = b"VANF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    /// Little-endian element bytes.
    pub payload: Vec<u8>,
}

impl Record {
    pub fn from_reals<T: Real>(name: impl Into<String>, shape: &[usize], values: &[T]) -> Record {
        let mut payload = Vec::with_capacity(values.len() * T::DTYPE.width());
        for &v in values {
            v.to_le_bytes_vec(&mut payload);
        }
        Record { name: name.into(), dtype: T::DTYPE, shape: shape.iter().map(|&d| d as u64).collect(), payload }
    }

    pub fn from_u64s(name: impl Into<String>, values: &[u64]) -> Record {
        Record {
            name: name.into(),
            dtype: DType::U64,
            shape: vec![values.len() as u64],
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product::<u64>() as usize
    }

    pub fn to_reals<T: Real>(&self) -> Option<Vec<T>> {
        (self.dtype == T::DTYPE).then(|| self.payload.chunks_exact(self.dtype.width()).map(T::from_le_slice).collect())
    }

    pub fn to_u64s(&self) -> Option<Vec<u64>> {
        (self.dtype == DType::U64)
            .then(|| self.payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.dtype.tag());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&r.payload);
        }
        let len = out.len() as u64;
        out[8..16].copy_from_slice(&len.to_le_bytes());
        out
    }

    /// Parses a whole file. Nothing is returned unless every record is intact.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let fail = |record: &str, reason: String| Error::Checkpoint { path: path.to_path_buf(), record: record.to_string(), reason };
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4) != Some(MAGIC.as_slice()) {
            return Err(fail("header", "bad magic bytes".into()));
        }
        let version = rd.u32().ok_or_else(|| fail("header", "truncated header".into()))?;
        if version != VERSION {
            return Err(fail("header", format!("unsupported version {version}")));
        }
        let total = rd.u64().ok_or_else(|| fail("header", "truncated header".into()))?;
        if total != bytes.len() as u64 {
            return Err(fail("header", format!("header declares {total} bytes, file has {}", bytes.len())));
        }
        let count = rd.u32().ok_or_else(|| fail("header", "truncated header".into()))?;
        debug_assert_eq!(rd.pos, HEADER_LEN);
        let mut records = Vec::with_capacity(count as usize);
        for i in 0..count {
            let label = format!("#{i}");
            let trunc = |what: &str, name: &str| fail(name, format!("truncated {what}"));
            let nlen = rd.u32().ok_or_else(|| trunc("name length", &label))? as usize;
            let name_bytes = rd.take(nlen).ok_or_else(|| trunc("name", &label))?;
            let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| fail(&label, "name is not UTF-8".into()))?;
            let label = format!("#{i} '{name}'");
            let tag = rd.take(1).ok_or_else(|| trunc("dtype", &label))?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| fail(&label, format!("unknown dtype tag {tag}")))?;
            let rank = rd.u32().ok_or_else(|| trunc("rank", &label))? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(rd.u64().ok_or_else(|| trunc("extents", &label))?);
            }
            let numel = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d)).ok_or_else(|| fail(&label, "extent overflow".into()))?;
            let len = (numel as usize).checked_mul(dtype.width()).ok_or_else(|| fail(&label, "extent overflow".into()))?;
            let payload = rd.take(len).ok_or_else(|| trunc("payload", &label))?.to_vec();
            records.push(Record { name, dtype, shape, payload });
        }
        if rd.pos != bytes.len() {
            return Err(fail("trailer", format!("{} unexpected trailing bytes", bytes.len() - rd.pos)));
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}
