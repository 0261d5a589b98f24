//! Binary checkpoint, little-endian throughout:
//!
//! ```text
//! "MCLS" | version u32 | arch tag (u32 len + UTF-8) | config text (u32 len + UTF-8)
//! | tensor count u32 | per tensor: name (u32 len + UTF-8), rank u32, dims u64.., f64 data
//! ```
//!
//! The config text is the model's `key=value` block followed by
//! `train.seed`, `train.epochs`, `train.final_loss` and one `class.<k>` line
//! per class name. Tensors are the parameters followed by the batchnorm
//! running statistics.

use std::path::Path;

use super::{Arch, Model, ModelConfig, ModelError};
use crate::ndcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCLS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainMeta,
    pub class_names: Vec<String>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::BadCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn config_text(&self) -> String {
        let mut s = self.model.config.to_text();
        s.push_str(&format!(
            "train.seed={}\ntrain.epochs={}\ntrain.final_loss={:?}\n",
            self.meta.seed, self.meta.epochs, self.meta.final_loss
        ));
        for (k, name) in self.class_names.iter().enumerate() {
            s.push_str(&format!("class.{k}={name}\n"));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, self.model.arch().tag());
        put_str(&mut out, &self.config_text());
        let tensors: Vec<(&str, &Tensor)> = self.model.params.iter().chain(self.model.buffers.iter()).collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint, ModelError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).map_err(|_| bad("missing magic"))? != CHECKPOINT_MAGIC {
            return Err(bad("unknown magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let arch: Arch = r.string()?.parse().map_err(|_| bad("unknown architecture tag"))?;
        let text = r.string()?;
        let (config, rest) = ModelConfig::from_text(arch, &text)?;
        let mut seed = None;
        let mut epochs = None;
        let mut final_loss = None;
        let mut classes: Vec<(usize, String)> = Vec::new();
        for (k, v) in rest {
            let parse_err = || bad(format!("bad value for {k}"));
            match k.as_str() {
                "train.seed" => seed = Some(v.parse().map_err(|_| parse_err())?),
                "train.epochs" => epochs = Some(v.parse().map_err(|_| parse_err())?),
                "train.final_loss" => final_loss = Some(v.parse().map_err(|_| parse_err())?),
                _ => {
                    let idx = k.strip_prefix("class.").and_then(|i| i.parse().ok()).ok_or_else(|| bad(format!("unknown key {k}")))?;
                    classes.push((idx, v));
                }
            }
        }
        let meta = TrainMeta {
            seed: seed.ok_or_else(|| bad("missing train.seed"))?,
            epochs: epochs.ok_or_else(|| bad("missing train.epochs"))?,
            final_loss: final_loss.ok_or_else(|| bad("missing train.final_loss"))?,
        };
        classes.sort_by_key(|(k, _)| *k);
        if classes.iter().enumerate().any(|(i, (k, _))| i != *k) || (!classes.is_empty() && classes.len() != config.num_classes()) {
            return Err(bad("class names do not cover 0..num_classes"));
        }
        let class_names = classes.into_iter().map(|(_, n)| n).collect();

        // refuse configs whose tensors cannot fit in the rest of the file
        // before allocating them
        if config.scalar_count().saturating_mul(8) > buf.len() - r.pos {
            return Err(bad("tensor data shorter than the config requires"));
        }
        let mut model = Model::new(config, 0)?;
        let n = r.u32()? as usize;
        let expected = model.params.len() + model.buffers.len();
        if n != expected {
            return Err(bad(format!("{n} tensors, architecture has {expected}")));
        }
        let names: Vec<String> = model.params.names().iter().chain(model.buffers.names()).cloned().collect();
        let n_params = model.params.len();
        for (k, expected_name) in names.iter().enumerate() {
            let name = r.string()?;
            if &name != expected_name {
                return Err(bad(format!("tensor {k} is '{name}', expected '{expected_name}'")));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let slot = if k < n_params { model.params.get_mut(k) } else { model.buffers.get_mut(k - n_params) };
            if slot.shape() != dims.as_slice() {
                return Err(bad(format!("tensor {name} has shape {dims:?}, expected {:?}", slot.shape())));
            }
            for v in slot.data_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { model, meta, class_names })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let buf = std::fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        Checkpoint::from_bytes(&buf)
    }

    /// Class name for a predicted label, or the label itself when the
    /// checkpoint carries no names.
    pub fn class_name(&self, label: usize) -> String {
        self.class_names.get(label).cloned().unwrap_or_else(|| label.to_string())
    }
}
