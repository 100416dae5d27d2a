//! Binary checkpoint: `ECSR`, u32 version, u64 header length, JSON header,
//! then little-endian f32 payloads in directory order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimState};
use crate::error::{Error, Result};
use crate::nn::{model_specs, ModelConfig, ModelParams, ParamStore};
use crate::tensor::{Shape4, Tensor4};

pub const MAGIC: &[u8; 4] = b"ECSR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub optim: Option<OptimState>,
    /// Free-form run metadata.
    pub meta: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Slot {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    slot: Slot,
    shape: [usize; 4],
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    optim: Option<OptimHeader>,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint {
            params,
            step: 0,
            optim: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sources: Vec<(&str, Slot, &Tensor4<f32>)> = Vec::new();
        let store = &self.params.store;
        sources.extend(store.tensors.iter().map(|(k, t)| (k.as_str(), Slot::Param, t)));
        sources.extend(store.buffers.iter().map(|(k, t)| (k.as_str(), Slot::Buffer, t)));
        if let Some(o) = &self.optim {
            sources.extend(o.m.iter().map(|(k, t)| (k.as_str(), Slot::AdamM, t)));
            sources.extend(o.v.iter().map(|(k, t)| (k.as_str(), Slot::AdamV, t)));
        }
        let mut offset = 0u64;
        let tensors = sources
            .iter()
            .map(|(name, slot, t)| {
                let length = 4 * t.numel() as u64;
                let e = Entry {
                    name: name.to_string(),
                    slot: *slot,
                    shape: t.shape().dims(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        let header = Header {
            config: self.params.config.clone(),
            step: self.step,
            optim: self.optim.as_ref().map(|o| OptimHeader {
                config: o.config,
                step: o.step,
            }),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in sources {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        if bytes.len() < 16 {
            return Err(fmt(format!("file is {} bytes, shorter than the preamble", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version} (expected {VERSION})")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[16..];
        if hlen > body.len() as u64 {
            return Err(fmt(format!("header length {hlen} exceeds file size")));
        }
        let header: Header = serde_json::from_slice(&body[..hlen as usize])
            .map_err(|e| fmt(format!("header: {e}")))?;
        let payload = &body[hlen as usize..];

        let mut store = ParamStore::default();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for e in header.tensors {
            let shape = Shape4::from_dims(e.shape);
            let end = e.offset.checked_add(e.length);
            if e.length != 4 * shape.numel() as u64 || end.is_none_or(|x| x > payload.len() as u64) {
                return Err(fmt(format!("tensor `{}` payload is truncated or inconsistent", e.name)));
            }
            let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor4::from_vec(shape, data)?;
            let map = match e.slot {
                Slot::Param => &mut store.tensors,
                Slot::Buffer => &mut store.buffers,
                Slot::AdamM => &mut m,
                Slot::AdamV => &mut v,
            };
            map.insert(e.name, t);
        }
        let optim = header.optim.map(|o| OptimState {
            config: o.config,
            step: o.step,
            m,
            v,
        });
        Ok(Checkpoint {
            params: ModelParams {
                config: header.config,
                store,
            },
            step: header.step,
            optim,
            meta: header.meta,
        })
    }
}

/// Writes through a temporary file and renames, so an interrupted save leaves
/// the previous checkpoint intact.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Loads a checkpoint and checks it against the architecture it records.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let specs = model_specs(&ckpt.params.config);
    ckpt.params.store.check_against(&specs)?;
    if let Some(o) = &ckpt.optim {
        for (name, t) in &ckpt.params.store.tensors {
            for moments in [&o.m, &o.v] {
                let found = moments.get(name).map(|x| x.shape());
                if found != Some(t.shape()) {
                    return Err(Error::ParamShape {
                        name: format!("{name} (optimizer moment)"),
                        expected: t.shape().dims(),
                        found: found.map_or([0; 4], |s| s.dims()),
                    });
                }
            }
        }
    }
    Ok(ckpt)
}

/// Loads parameters for a specific architecture; shape disagreements name the parameter.
pub fn load_params_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    ckpt.params.store.check_against(&model_specs(config))?;
    Ok(ModelParams {
        config: config.clone(),
        store: ckpt.params.store,
    })
}
