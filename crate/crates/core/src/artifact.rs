//! A small binary container for named `f64` arrays plus JSON metadata.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON
//! header, then the arrays back to back as little-endian `f64`. The header
//! lists each array's name, shape and element offset, so files written from
//! identical contents are byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QmdaError, Result};
use crate::linalg::Mat;

const MAGIC: &[u8; 8] = b"QMDAART1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

/// In-memory artifact. Arrays keep insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    kind: String,
    meta: serde_json::Value,
    names: Vec<String>,
    arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Artifact {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Artifact {
            kind: kind.into(),
            meta,
            names: Vec::new(),
            arrays: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.meta
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone())
            .map_err(|e| QmdaError::Artifact(format!("{} metadata: {e}", self.kind)))
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(QmdaError::Artifact(format!(
                "array {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        if self.arrays.insert(name.into(), (shape, data)).is_some() {
            return Err(QmdaError::Artifact(format!("duplicate array {name}")));
        }
        self.names.push(name.into());
        Ok(())
    }

    pub fn push_vec(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.push(name, vec![v.len()], v.to_vec())
    }

    pub fn push_mat(&mut self, name: &str, m: &Mat) -> Result<()> {
        self.push(name, vec![m.rows(), m.cols()], m.as_slice().to_vec())
    }

    fn entry(&self, name: &str) -> Result<&(Vec<usize>, Vec<f64>)> {
        self.arrays
            .get(name)
            .ok_or_else(|| QmdaError::Artifact(format!("{} has no array {name}", self.kind)))
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        let (shape, data) = self.entry(name)?;
        if shape.len() != 1 {
            return Err(QmdaError::Artifact(format!("array {name} is not a vector")));
        }
        Ok(data.clone())
    }

    /// Flat data of an array of any shape.
    pub fn vec_nd(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.entry(name)?.1.clone())
    }

    pub fn mat(&self, name: &str) -> Result<Mat> {
        let (shape, data) = self.entry(name)?;
        match shape.as_slice() {
            [r, c] => Mat::from_vec(*r, *c, data.clone()),
            _ => Err(QmdaError::Artifact(format!("array {name} is not a matrix"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let arrays = self
            .names
            .iter()
            .map(|name| {
                let shape = self.arrays[name].0.clone();
                let e = Entry {
                    name: name.clone(),
                    offset,
                    shape,
                };
                offset += self.arrays[name].1.len();
                e
            })
            .collect();
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| QmdaError::Artifact(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for name in &self.names {
            for v in &self.arrays[name].1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| QmdaError::Artifact(m.into());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a qmda artifact"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| QmdaError::Artifact(format!("header: {e}")))?;
        let data = &bytes[16 + len..];
        if data.len() % 8 != 0 {
            return Err(bad("array section is not a whole number of f64 values"));
        }
        let mut art = Artifact::new(&header.kind, header.meta);
        for e in header.arrays {
            let count: usize = e.shape.iter().product();
            let range = e.offset * 8..(e.offset + count) * 8;
            let raw = data
                .get(range)
                .ok_or_else(|| QmdaError::Artifact(format!("array {} runs past the end", e.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            art.push(&e.name, e.shape, values)?;
        }
        Ok(art)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let file = File::create(path).map_err(|e| QmdaError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).map_err(|e| QmdaError::io(path, e))?;
        w.flush().map_err(|e| QmdaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| QmdaError::io(path, e))?;
    let mut buf = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut buf)
        .map_err(|e| QmdaError::io(path, e))?;
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}
