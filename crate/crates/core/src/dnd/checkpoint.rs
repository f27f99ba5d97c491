//! Binary checkpoints: magic, a length-prefixed JSON header, then named
//! tensors as 32-bit little-endian row-major values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baseline::GaussianBaseline;
use super::config::{DndConfig, Variant};
use super::decode::Model;
use super::model::{Layout, NeuralDecoder};
use crate::alphabet::TYPEABLE;
use crate::compute::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TAPDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: DndConfig,
    pub rng_seed: u64,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, rng_seed: u64, epoch: usize, metrics: BTreeMap<String, f64>) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                config: model.config().clone(),
                rng_seed,
                epoch,
                metrics,
            },
            model,
        }
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        match &self.model {
            Model::Neural(m) => m
                .params
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec()))
                .collect(),
            Model::Gaussian(g) => {
                let flat = |v: &[[f64; 2]]| v.iter().flat_map(|r| r.iter().map(|&x| x as f32)).collect();
                vec![
                    ("gauss.mean".into(), vec![TYPEABLE, 2], flat(&g.means)),
                    ("gauss.var".into(), vec![TYPEABLE, 2], flat(&g.vars)),
                ]
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let tensors = self.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, shape, data) in tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::read_expecting(r, None)
    }

    /// Loads a checkpoint whose tensors must match `expected` instead of the
    /// configuration recorded in its header.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &DndConfig) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_expecting(bytes.as_slice(), Some(expected))
    }

    pub fn read_expecting<R: Read>(mut r: R, expected: Option<&DndConfig>) -> Result<Self> {
        let truncated = |what: &str| Error::Checkpoint(format!("truncated file while reading {what}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut R, what: &str| -> Result<u32> {
            r.read_exact(&mut u32_buf).map_err(|_| truncated(what))?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let hlen = read_u32(&mut r, "header length")? as usize;
        let mut hbytes = vec![0u8; hlen];
        r.read_exact(&mut hbytes).map_err(|_| truncated("header"))?;
        let mut header: CheckpointHeader =
            serde_json::from_slice(&hbytes).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if let Some(cfg) = expected {
            header.config = cfg.clone();
        }
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        header.config.validate()?;
        let count = read_u32(&mut r, "tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = read_u32(&mut r, "tensor name")? as usize;
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name).map_err(|_| truncated("tensor name"))?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r, &name)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut r, &name)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(|_| truncated(&name))?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, shape, data));
        }
        let model = build_model(&header, tensors)?;
        Ok(Self { header, model })
    }
}

fn build_model(header: &CheckpointHeader, tensors: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Model> {
    let cfg = &header.config;
    let expected: Vec<(String, Vec<usize>)> = if cfg.variant == Variant::GaussianBaseline {
        vec![("gauss.mean".into(), vec![TYPEABLE, 2]), ("gauss.var".into(), vec![TYPEABLE, 2])]
    } else {
        Layout::expected_shapes(cfg)?
    };
    let mut by_name: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for (name, shape, data) in tensors {
        if by_name.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::TensorMismatch {
                name,
                detail: "appears twice".into(),
            });
        }
    }
    for (name, shape) in &expected {
        match by_name.get(name) {
            None => {
                return Err(Error::TensorMismatch {
                    name: name.clone(),
                    detail: "missing from checkpoint".into(),
                })
            }
            Some((s, _)) if s != shape => {
                return Err(Error::TensorMismatch {
                    name: name.clone(),
                    detail: format!("shape {s:?} does not match configured {shape:?}"),
                })
            }
            Some((_, data)) if data.iter().any(|v| !v.is_finite()) => {
                return Err(Error::TensorMismatch {
                    name: name.clone(),
                    detail: "contains non-finite values".into(),
                })
            }
            _ => {}
        }
    }
    if let Some(extra) = by_name.keys().find(|k| !expected.iter().any(|(n, _)| n == *k)) {
        return Err(Error::TensorMismatch {
            name: extra.clone(),
            detail: "not part of the configured model".into(),
        });
    }
    if cfg.variant == Variant::GaussianBaseline {
        let rows = |name: &str| -> Vec<[f64; 2]> {
            by_name[name].1.chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect()
        };
        return Ok(Model::Gaussian(GaussianBaseline {
            config: cfg.clone(),
            means: rows("gauss.mean"),
            vars: rows("gauss.var"),
        }));
    }
    let mut params = ParamStore::<f32>::new();
    let layout = Layout::build(cfg, &mut params, 0)?;
    for p in params.params_mut() {
        let (shape, data) = by_name.remove(&p.name).expect("checked above");
        p.value = Tensor::new(shape, data)?;
    }
    Ok(Model::Neural(NeuralDecoder { layout, params }))
}
