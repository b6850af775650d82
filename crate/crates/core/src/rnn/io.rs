//! Versioned binary weight files with a trailing SHA-256 and a JSON manifest.
//!
//! Layout: magic `JEAMC-W`, version `u16`, model spec block, tensor count,
//! then per tensor its name, shape and little-endian f32 data, then the
//! provenance record as JSON, then the digest of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::{CellKind, ModelSpec, INPUT_SIZE, OUTPUT_SIZE};
use super::weights::{ModelWeights, Provenance};
use crate::digest::{sha256, sha256_hex};
use crate::error::{Error, Result};
use crate::signal_gen::manifest_path;

pub const WEIGHTS_MAGIC: &[u8; 7] = b"JEAMC-W";
pub const WEIGHTS_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format: String,
    pub version: u16,
    pub spec: ModelSpec,
    pub tensors: Vec<TensorEntry>,
    pub num_params: usize,
    pub sha256: String,
    pub provenance: Provenance,
}

impl ModelWeights {
    pub fn manifest(&self) -> WeightsManifest {
        let bytes = self.to_bytes();
        WeightsManifest {
            format: "JEAMC weights".into(),
            version: WEIGHTS_VERSION,
            spec: self.spec.clone(),
            tensors: self
                .layout()
                .tensors
                .iter()
                .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() })
                .collect(),
            num_params: self.num_params(),
            sha256: sha256_hex(&bytes),
            provenance: self.provenance.clone(),
        }
    }

    /// Digest of the serialized file.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + 4 * self.params.len());
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        let s = &self.spec;
        buf.push(match s.cell {
            CellKind::Lstm => 0,
            CellKind::Gru => 1,
        });
        for v in [s.num_layers, s.hidden_size, s.linear_size, INPUT_SIZE, OUTPUT_SIZE] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&s.dropout_p.to_le_bytes());
        buf.push(u8::from(s.dropout_between_layers));
        let layout = self.layout();
        buf.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
        for t in &layout.tensors {
            buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(t.name.as_bytes());
            buf.push(t.shape.len() as u8);
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &self.params[t.range()] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let prov = serde_json::to_vec(&self.provenance).expect("provenance serializes");
        buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
        buf.extend_from_slice(&prov);
        let digest = sha256(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    /// Parses a weight file. Nothing is returned unless the digest verifies
    /// and every tensor matches the shapes implied by the stored spec.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < WEIGHTS_MAGIC.len() + 2 + DIGEST_LEN {
            return Err(Error::Digest);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if sha256(body) != digest {
            return Err(Error::Digest);
        }
        let mut r = Cursor { bytes: body, pos: 0 };
        if r.take(WEIGHTS_MAGIC.len())? != WEIGHTS_MAGIC {
            return Err(Error::Format("bad weights magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != WEIGHTS_VERSION {
            return Err(Error::Version { found: version, expected: WEIGHTS_VERSION });
        }
        let cell = match r.take(1)?[0] {
            0 => CellKind::Lstm,
            1 => CellKind::Gru,
            b => return Err(Error::Format(format!("unknown cell kind byte {b}"))),
        };
        let num_layers = r.u32()? as usize;
        let hidden_size = r.u32()? as usize;
        let linear_size = r.u32()? as usize;
        let (input, output) = (r.u32()? as usize, r.u32()? as usize);
        if input != INPUT_SIZE || output != OUTPUT_SIZE {
            return Err(Error::Shape(format!("input/output sizes {input}/{output}")));
        }
        let dropout_p = f64::from_le_bytes(r.array()?);
        let dropout_between_layers = r.take(1)?[0] != 0;
        let spec = ModelSpec { cell, num_layers, hidden_size, linear_size, dropout_p, dropout_between_layers };
        spec.validate().map_err(|e| Error::Shape(e.to_string()))?;
        let mut weights = ModelWeights::zeros(&spec)?;
        let layout = weights.layout().clone();
        let count = r.u32()? as usize;
        if count != layout.tensors.len() {
            return Err(Error::Shape(format!("{count} tensors, spec implies {}", layout.tensors.len())));
        }
        for info in &layout.tensors {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Format(e.to_string()))?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != info.name || shape != info.shape {
                return Err(Error::Shape(format!(
                    "tensor `{name}` {shape:?}, expected `{}` {:?}",
                    info.name, info.shape
                )));
            }
            let data = r.take(4 * info.len())?;
            for (dst, chunk) in weights.params[info.range()].iter_mut().zip(data.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        let prov_len = r.u32()? as usize;
        weights.provenance = serde_json::from_slice(r.take(prov_len)?)?;
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after provenance".into()));
        }
        Ok(weights)
    }
}

/// Writes the weight file and its `.json` manifest.
pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<WeightsManifest> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let manifest = weights.manifest();
    fs::write(path, weights.to_bytes())?;
    fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    ModelWeights::from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format("unexpected end of weights data".into())),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}
