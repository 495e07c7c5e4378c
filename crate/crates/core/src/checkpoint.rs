//! Shared checkpoint format.
//!
//! Layout: magic bytes `F4DC`, format version `u32`, entry count `u64`,
//! then per entry: name length `u64` + UTF-8 name, rank `u64`, dims as
//! `u64`, values as little-endian 64-bit floats. Round-trips bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffnet::{Param, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"F4DC";
pub const FORMAT_VERSION: u32 = 1;

/// A checkpoint is an ordered map from entry name to a shaped f64 array.
/// Model weights, standardization vectors, and scalar hyperparameters all
/// travel as entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.insert(name.into(), (shape, values));
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, vec![1], vec![value]);
    }

    pub fn insert_vec(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.insert(name, vec![values.len()], values);
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.entries
            .get(name)
            .map(|(s, v)| (s.as_slice(), v.as_slice()))
            .ok_or_else(|| Error::CheckpointFormat(format!("missing entry `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let (_, v) = self.get(name)?;
        if v.len() != 1 {
            return Err(Error::CheckpointFormat(format!(
                "entry `{name}` is not scalar (len {})",
                v.len()
            )));
        }
        Ok(v[0])
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.1.to_vec())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Adds every parameter of a store under `prefix`.
    pub fn insert_params(&mut self, prefix: &str, store: &ParamStore) {
        for (name, p) in store.iter() {
            self.insert(format!("{prefix}{name}"), p.shape.clone(), p.values.clone());
        }
    }

    /// Extracts all entries under `prefix` into a fresh parameter store,
    /// stripping the prefix.
    pub fn extract_params(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, (shape, values)) in &self.entries {
            if let Some(stripped) = name.strip_prefix(prefix) {
                let mut p = Param::zeros(shape.clone());
                p.values = values.clone();
                store.insert(stripped, p);
            }
        }
        store
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, (shape, values)) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::CheckpointFormat(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let count = read_u64(r)? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::CheckpointFormat("non-UTF8 entry name".into()))?;
            let rank = read_u64(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            ck.insert(name, shape, values);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
