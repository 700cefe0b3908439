//! Binary checkpoint: `TGCK`, a version byte, a TOML manifest and named
//! little-endian f64 tensors.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TGCK";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    epoch: usize,
    representation: String,
    class_names: Vec<String>,
    model: ModelConfig,
    optimizer: Option<OptimizerManifest>,
    #[serde(default)]
    best_metric: Option<f64>,
    #[serde(default)]
    stale_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerManifest {
    step: u64,
    config: AdamWConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamW>,
    pub epoch: usize,
    pub representation: String,
    pub class_names: Vec<String>,
    /// Best validation metric seen so far and epochs since it improved, so
    /// that a resumed run keeps its early-stopping state.
    pub best_metric: Option<f64>,
    pub stale_epochs: usize,
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let nb = name.as_bytes();
    let len = u16::try_from(nb.len()).map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(nb);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u16()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            epoch: self.epoch,
            representation: self.representation.clone(),
            class_names: self.class_names.clone(),
            model: self.model.config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerManifest { step: o.step, config: o.cfg }),
            best_metric: self.best_metric,
            stale_epochs: self.stale_epochs,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let params = &self.model.params;
        let n_tensors = params.len() * if self.optimizer.is_some() { 3 } else { 1 };
        out.extend_from_slice(&(n_tensors as u32).to_le_bytes());
        for (name, t) in params.named() {
            write_tensor(&mut out, name, t)?;
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, state) in [("adam.m.", &opt.m), ("adam.v.", &opt.v)] {
                for ((name, t), s) in params.named().zip(state) {
                    write_tensor(&mut out, &format!("{prefix}{name}"), &Tensor::new(t.shape(), s.clone())?)?;
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = c.take(1)?[0];
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mlen = c.u32()? as usize;
        let text = std::str::from_utf8(c.take(mlen)?).map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let count = c.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            tensors.push(c.tensor()?);
        }
        let mut model = Model::new(manifest.model, 0)?;
        let n = model.params.len();
        let want = n * if manifest.optimizer.is_some() { 3 } else { 1 };
        if tensors.len() != want {
            return Err(Error::Checkpoint(format!("expected {want} tensors, found {}", tensors.len())));
        }
        let mut rest = tensors.split_off(n);
        model.params.load(tensors)?;
        let optimizer = match manifest.optimizer {
            None => None,
            Some(om) => {
                let v_part = rest.split_off(n);
                let strip = |part: Vec<(String, Tensor)>, prefix: &str| -> Result<Vec<Vec<f64>>> {
                    part.into_iter()
                        .zip(model.params.named())
                        .map(|((name, t), (pname, pt))| {
                            if name != format!("{prefix}{pname}") || t.shape() != pt.shape() {
                                return Err(Error::Checkpoint(format!("unexpected optimizer tensor {name}")));
                            }
                            Ok(t.into_data())
                        })
                        .collect()
                };
                let m = strip(rest, "adam.m.")?;
                let v = strip(v_part, "adam.v.")?;
                Some(AdamW { cfg: om.config, step: om.step, m, v })
            }
        };
        Ok(Self {
            model,
            optimizer,
            epoch: manifest.epoch,
            representation: manifest.representation,
            class_names: manifest.class_names,
            best_metric: manifest.best_metric,
            stale_epochs: manifest.stale_epochs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
