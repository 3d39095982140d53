//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "NSCK"  u32 version(=1)  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 ndim, u32 dims[ndim], f32 payload
//! u32 metadata_len, metadata (UTF-8 JSON)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, ModelGraph, ParamSet, ParamTensor};
use crate::data::WhitenStats;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Prefix of momentum buffers stored alongside the parameters.
pub const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

/// Training metadata stored as the trailing JSON block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub arch: ArchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whiten: Option<WhitenStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl CheckpointMeta {
    pub fn new(arch: ArchSpec) -> Self {
        CheckpointMeta {
            epoch: 0,
            seed: arch.init_seed,
            config_hash: String::new(),
            arch,
            whiten: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub meta: CheckpointMeta,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("tensor name too long: {}", t.name)))?;
            let ndim = u8::try_from(t.dims.len())
                .map_err(|_| Error::Checkpoint(format!("too many dims for {}", t.name)))?;
            let numel: usize = t.dims.iter().map(|&d| d as usize).product();
            if numel != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "{}: dims {:?} imply {numel} values, have {}",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(ndim);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let ndim = r.u8("ndim")? as usize;
            let dims = (0..ndim).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: dims overflow")))?;
            let bytes = numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: dims overflow")))?;
            let payload = r.take(bytes, &format!("payload of `{name}` with dims {dims:?}"))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { tensors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the model described by the metadata and loads its weights.
    pub fn to_model<T: Scalar>(&self) -> Result<ModelGraph<T>> {
        let mut model: ModelGraph<T> = self.meta.arch.build()?;
        let set = ParamSet(
            self.tensors
                .iter()
                .filter(|t| !t.name.starts_with(MOMENTUM_PREFIX))
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    role: super::ParamRole::Weight,
                    dims: t.dims.iter().map(|&d| d as usize).collect(),
                    values: t.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
                })
                .collect(),
        );
        let expected = model.params();
        for t in &set.0 {
            match expected.get(&t.name) {
                None => return Err(Error::Checkpoint(format!("unexpected tensor `{}`", t.name))),
                Some(p) if p.dims != t.dims => {
                    return Err(Error::Checkpoint(format!(
                        "`{}` has dims {:?}, model expects {:?}",
                        t.name, t.dims, p.dims
                    )))
                }
                _ => {}
            }
        }
        model.load_params(&set)?;
        Ok(model)
    }

    /// Momentum buffers, if the checkpoint carries them.
    pub fn momentum<T: Scalar>(&self) -> Option<ParamSet<T>> {
        let v: Vec<ParamTensor<T>> = self
            .tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix(MOMENTUM_PREFIX).map(|n| ParamTensor {
                    name: n.to_string(),
                    role: super::ParamRole::Weight,
                    dims: t.dims.iter().map(|&d| d as usize).collect(),
                    values: t.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
                })
            })
            .collect();
        (!v.is_empty()).then_some(ParamSet(v))
    }

    /// Writes the interchange form: `manifest.json` plus a raw f32 blob.
    pub fn export_raw(&self, manifest: impl AsRef<Path>, blob: impl AsRef<Path>) -> Result<()> {
        let mut entries = Vec::new();
        let mut bytes = Vec::new();
        for t in &self.tensors {
            entries.push(RawManifestEntry {
                name: t.name.clone(),
                dims: t.dims.iter().map(|&d| d as usize).collect(),
                offset: bytes.len() as u64,
            });
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let doc = RawManifest {
            meta: self.meta.clone(),
            tensors: entries,
        };
        let (manifest, blob) = (manifest.as_ref(), blob.as_ref());
        fs::write(manifest, serde_json::to_vec_pretty(&doc)?).map_err(|e| Error::io(manifest, e))?;
        fs::write(blob, bytes).map_err(|e| Error::io(blob, e))
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Parameters (and buffers) as f32, plus optional momentum buffers.
    pub fn to_checkpoint(&self, meta: CheckpointMeta, momentum: Option<&ParamSet<T>>) -> Checkpoint {
        let conv = |p: &ParamTensor<T>, prefix: &str| NamedTensor {
            name: format!("{prefix}{}", p.name),
            dims: p.dims.iter().map(|&d| d as u32).collect(),
            data: p.values.iter().map(|v| v.to_f64_lossy() as f32).collect(),
        };
        let mut tensors: Vec<NamedTensor> = self.params().0.iter().map(|p| conv(p, "")).collect();
        if let Some(m) = momentum {
            tensors.extend(m.0.iter().map(|p| conv(p, MOMENTUM_PREFIX)));
        }
        Checkpoint { tensors, meta }
    }
}

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, meta: CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    model.to_checkpoint(meta, None).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph<f32>> {
    Checkpoint::load(path)?.to_model()
}

/// One tensor in a raw-blob manifest; `offset` is in bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    meta: CheckpointMeta,
    tensors: Vec<RawManifestEntry>,
}

/// Assembles a checkpoint from a manifest (JSON: `meta` + `tensors` entries
/// of name, dims, byte offset) and a raw little-endian f32 blob.
pub fn import_raw(manifest: impl AsRef<Path>, blob: impl AsRef<Path>) -> Result<Checkpoint> {
    let (manifest, blob) = (manifest.as_ref(), blob.as_ref());
    let text = fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let doc: RawManifest = serde_json::from_slice(&text)?;
    let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
    let mut tensors = Vec::new();
    for e in doc.tensors {
        let numel: usize = e.dims.iter().product();
        let start = e.offset as usize;
        let end = start + numel * 4;
        if end > bytes.len() {
            return Err(Error::Truncated(format!(
                "blob holds {} bytes, `{}` needs {start}..{end}",
                bytes.len(),
                e.name
            )));
        }
        tensors.push(NamedTensor {
            dims: e.dims.iter().map(|&d| d as u32).collect(),
            data: bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            name: e.name,
        });
    }
    Ok(Checkpoint { tensors, meta: doc.meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_scaled, Family};

    fn sample() -> Checkpoint {
        let m = build_scaled::<f32>(Family::Resnet, &[1, 1], 4, (3, 8, 8), 3).unwrap();
        let mut meta = CheckpointMeta::new(m.arch().clone());
        meta.epoch = 3;
        meta.config_hash = "abc".into();
        m.to_checkpoint(meta, None)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.nsck");
        let b = dir.path().join("b.nsck");
        let ck = sample();
        ck.save(&a).unwrap();
        let model = load_checkpoint(&a).unwrap();
        model.to_checkpoint(Checkpoint::load(&a).unwrap().meta, None).save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(Checkpoint::load(&b).unwrap(), ck);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn dims_larger_than_payload_is_truncation() {
        let ck = Checkpoint {
            tensors: vec![NamedTensor {
                name: "t".into(),
                dims: vec![2, 2],
                data: vec![1.0; 4],
            }],
            meta: sample().meta,
        };
        let mut bytes = ck.to_bytes().unwrap();
        // name_len(2) + "t" + ndim(1) -> first dim at offset 12 + 4
        let dim_off = 12 + 2 + 1 + 1;
        bytes[dim_off..dim_off + 4].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Truncated(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    }

    #[test]
    fn raw_export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        let (m, b) = (dir.path().join("m.json"), dir.path().join("w.f32"));
        ck.export_raw(&m, &b).unwrap();
        assert_eq!(import_raw(&m, &b).unwrap(), ck);
    }

    #[test]
    fn momentum_survives_round_trip() {
        let m = build_scaled::<f32>(Family::Plain, &[1], 2, (3, 4, 4), 2).unwrap();
        let mut vel = m.zero_grads();
        vel.0[0].values[0] = 0.25;
        let ck = m.to_checkpoint(CheckpointMeta::new(m.arch().clone()), Some(&vel));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.momentum::<f32>().unwrap().0[0].values[0], 0.25);
        assert_eq!(back.to_model::<f32>().unwrap(), m);
    }
}
