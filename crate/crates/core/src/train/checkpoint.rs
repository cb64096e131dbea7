//! Versioned checkpoint container.
//!
//! Layout: `PSCK` magic, u32 version, u64 header length, JSON header,
//! little-endian tensor blobs in header order, SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::AdamW;
use crate::config::Config;
use crate::frontend::Frontend;
use crate::model::{Discriminator, ParaStyleTts};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Header {
    pub schema_hash: String,
    pub config: BTreeMap<String, String>,
    pub step: u64,
    pub optimizers: BTreeMap<String, OptimizerState>,
    pub tensors: Vec<TensorEntry>,
}

/// What to write: the model is mandatory, the rest is training state.
pub struct CheckpointParts<'a> {
    pub model: &'a ParaStyleTts,
    pub disc: Option<&'a Discriminator>,
    pub opt_g: Option<&'a AdamW>,
    pub opt_d: Option<&'a AdamW>,
    pub step: u64,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Invalid(format!("cannot checkpoint dtype {other:?}"))),
    }
}

fn push_tensor(blobs: &mut Vec<u8>, entries: &mut Vec<TensorEntry>, group: &str, name: &str, t: &Tensor) -> Result<()> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| blobs.extend_from_slice(&v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| blobs.extend_from_slice(&v.to_le_bytes())),
        _ => {}
    }
    entries.push(TensorEntry {
        group: group.into(),
        name: name.into(),
        shape: t.dims().to_vec(),
        dtype: dtype_name(t.dtype())?.into(),
    });
    Ok(())
}

fn push_optimizer(
    blobs: &mut Vec<u8>,
    entries: &mut Vec<TensorEntry>,
    states: &mut BTreeMap<String, OptimizerState>,
    group: &str,
    opt: &AdamW,
) -> Result<()> {
    for (i, (name, _)) in opt.params.iter().enumerate() {
        push_tensor(blobs, entries, &format!("{group}.m"), name, &opt.m[i])?;
        push_tensor(blobs, entries, &format!("{group}.v"), name, &opt.v[i])?;
    }
    states.insert(group.into(), OptimizerState { t: opt.t, lr: opt.lr() });
    Ok(())
}

pub fn save_checkpoint(path: &Path, parts: &CheckpointParts) -> Result<()> {
    let mut blobs = Vec::new();
    let mut entries = Vec::new();
    let mut optimizers = BTreeMap::new();
    for (name, var) in parts.model.store.vars() {
        push_tensor(&mut blobs, &mut entries, "model", &name, var.as_tensor())?;
    }
    if let Some(d) = parts.disc {
        for (name, var) in d.store.vars() {
            push_tensor(&mut blobs, &mut entries, "disc", &name, var.as_tensor())?;
        }
    }
    if let Some(o) = parts.opt_g {
        push_optimizer(&mut blobs, &mut entries, &mut optimizers, "opt_g", o)?;
    }
    if let Some(o) = parts.opt_d {
        push_optimizer(&mut blobs, &mut entries, &mut optimizers, "opt_d", o)?;
    }
    let header = Header {
        schema_hash: parts.model.cfg.schema_hash(),
        config: parts.model.cfg.as_map(),
        step: parts.step,
        optimizers,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + blobs.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);

    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A verified, parsed checkpoint.
#[derive(Debug)]
pub struct Checkpoint {
    pub path: PathBuf,
    pub header: Header,
    tensors: BTreeMap<(String, String), Tensor>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        if bytes.len() < 16 + 32 {
            return Err(Error::Checksum(format!("{}: file too short ({} bytes)", path.display(), bytes.len())));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Checksum(format!("{}: SHA-256 mismatch", path.display())));
        }
        if &body[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body.get(16..16 + hlen).ok_or_else(|| bad("header overruns file"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
        let mut offset = 16 + hlen;
        let mut tensors = BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let t = match e.dtype.as_str() {
                "f32" => {
                    let raw = body.get(offset..offset + 4 * n).ok_or_else(|| bad("blob overruns file"))?;
                    offset += 4 * n;
                    let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                "f64" => {
                    let raw = body.get(offset..offset + 8 * n).ok_or_else(|| bad("blob overruns file"))?;
                    offset += 8 * n;
                    let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                other => return Err(bad(&format!("unknown dtype {other}"))),
            };
            tensors.insert((e.group.clone(), e.name.clone()), t);
        }
        if offset != body.len() {
            return Err(bad("trailing bytes after tensor blobs"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            tensors,
        })
    }

    pub fn step(&self) -> u64 {
        self.header.step
    }

    /// The configuration the checkpoint was trained with.
    pub fn config(&self) -> Result<Config> {
        let mut cfg = Config::default();
        for (k, v) in &self.header.config {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tensor(&self, group: &str, name: &str) -> Option<&Tensor> {
        self.tensors.get(&(group.to_string(), name.to_string()))
    }

    fn assign(&self, group: &str, vars: &[(String, Var)]) -> Result<()> {
        for (name, var) in vars {
            let t = self.tensor(group, name).ok_or_else(|| Error::Checkpoint {
                path: self.path.clone(),
                reason: format!("missing {group} parameter {name}"),
            })?;
            if t.dims() != var.dims() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: var.dims().to_vec(),
                    found: t.dims().to_vec(),
                });
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    /// Copies parameters into `model`. Shapes are checked per parameter
    /// before the schema hash, so a dimension change names the parameter.
    pub fn restore_model(&self, model: &ParaStyleTts) -> Result<()> {
        self.assign("model", &model.store.vars())?;
        if model.cfg.schema_hash() != self.header.schema_hash {
            return Err(Error::Checkpoint {
                path: self.path.clone(),
                reason: "model configuration differs from the one the checkpoint was saved with".into(),
            });
        }
        Ok(())
    }

    pub fn restore_disc(&self, disc: &Discriminator) -> Result<()> {
        self.assign("disc", &disc.store.vars())
    }

    pub fn restore_optimizer(&self, group: &str, opt: &mut AdamW) -> Result<()> {
        let state = self.header.optimizers.get(group).ok_or_else(|| Error::Checkpoint {
            path: self.path.clone(),
            reason: format!("no optimizer state {group}"),
        })?;
        for i in 0..opt.params.len() {
            let name = &opt.params[i].0;
            for (slot, moment) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                let t = self
                    .tensor(&format!("{group}.{slot}"), name)
                    .ok_or_else(|| Error::Checkpoint {
                        path: self.path.clone(),
                        reason: format!("missing {group}.{slot} for {name}"),
                    })?;
                if t.dims() != moment.dims() {
                    return Err(Error::ParamShape {
                        name: format!("{group}.{slot}.{name}"),
                        expected: moment.dims().to_vec(),
                        found: t.dims().to_vec(),
                    });
                }
                *moment = t.to_dtype(moment.dtype())?;
            }
        }
        opt.t = state.t;
        opt.set_lr(state.lr);
        Ok(())
    }
}

/// Rebuilds the generator-side model from a checkpoint's own config.
pub fn load_model(path: &Path) -> Result<(ParaStyleTts, Checkpoint)> {
    let ck = Checkpoint::read(path)?;
    let cfg = ck.config()?;
    let model = ParaStyleTts::new(&cfg, &Frontend::bundled().vocab, 0)?;
    ck.restore_model(&model)?;
    Ok((model, ck))
}
