//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic    "DFSN1"
//! version  u16
//! config   u32 byte length + UTF-8 JSON {"model": ModelConfig, "meta": any}
//! count    u32
//! tensor   u16 name length + name, u8 ndim, ndim × u32 dims, f32 payload
//! ...
//! crc32    u32 over every preceding byte
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusionModel, FusionParams, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DFSN1";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A loaded model plus whatever run metadata was echoed into it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    /// Fails with a shape error if the stored tensors do not fit `expected`.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let mut have = HashMap::new();
        self.model.params.for_each(&mut |name, t| {
            have.insert(name.to_owned(), t.shape().to_vec());
        });
        let mut outcome = Ok(());
        FusionParams::zeros(expected)?.for_each(&mut |name, t| {
            if outcome.is_err() {
                return;
            }
            outcome = match have.get(name) {
                None => Err(Error::MissingTensor(name.to_owned())),
                Some(shape) if shape != t.shape() => Err(Error::shape(
                    "checkpoint",
                    format!(
                        "`{name}` is {shape:?} in the checkpoint but {:?} for the requested config",
                        t.shape()
                    ),
                )),
                Some(_) => Ok(()),
            };
        });
        outcome
    }
}

/// Serialises `model`. Payloads are stored as f32, so values that are not
/// f32-representable lose precision.
pub fn write_checkpoint(model: &FusionModel, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let block = serde_json::to_vec(&ConfigBlock {
        model: model.config.clone(),
        meta: meta.clone(),
    })
    .map_err(|e| Error::InvalidArgument(format!("cannot serialise config: {e}")))?;
    out.extend_from_slice(&len_u32(block.len(), "config block")?.to_le_bytes());
    out.extend_from_slice(&block);

    let mut tensors = Vec::new();
    model.params.for_each(&mut |name, t| tensors.push((name.to_owned(), t.clone())));
    out.extend_from_slice(&len_u32(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| Error::InvalidArgument(format!("too many dims for {name}")))?;
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(model: &FusionModel, meta: &serde_json::Value, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model, meta)?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }
}

/// Parses and validates a checkpoint image. `path` only labels errors.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(r.err("not a checkpoint (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < r.pos + 4 {
        return Err(r.err("truncated before checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    r.bytes = body;

    let block_len = r.u32("config length")? as usize;
    let block: ConfigBlock = serde_json::from_slice(r.take(block_len, "config block")?)
        .map_err(|e| r.err(format!("bad config block: {e}")))?;
    let template = FusionParams::zeros(&block.model)?;

    let count = r.u32("tensor count")? as usize;
    let mut stored_tensors: Vec<(String, Tensor)> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = usize::from(r.u16("name length")?);
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?
            .to_owned();
        let ndim = usize::from(r.take(1, "ndim")?[0]);
        let shape = (0..ndim)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.err(format!("`{name}` dimensions overflow")))?;
        let payload = r.take(
            len.checked_mul(4).ok_or_else(|| r.err("payload size overflow"))?,
            "tensor payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if stored_tensors.iter().any(|(n, _)| *n == name) {
            return Err(r.err(format!("duplicate tensor `{name}`")));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| r.err(format!("`{name}`: {e}")))?;
        stored_tensors.push((name, tensor));
    }
    if r.pos != body.len() {
        return Err(r.err(format!("{} trailing bytes", body.len() - r.pos)));
    }

    let mut ordered = Vec::with_capacity(stored_tensors.len());
    let mut problem = None;
    template.for_each(&mut |name, expected| {
        if problem.is_some() {
            return;
        }
        match stored_tensors.iter().position(|(n, _)| n == name) {
            None => problem = Some(Error::MissingTensor(name.to_owned())),
            Some(i) => {
                let t = &stored_tensors[i].1;
                if t.shape() != expected.shape() {
                    problem = Some(Error::shape(
                        "checkpoint",
                        format!(
                            "`{name}` is stored as {:?} but the echoed config needs {:?}",
                            t.shape(),
                            expected.shape()
                        ),
                    ));
                }
                ordered.push(t.clone());
            }
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if stored_tensors.len() != ordered.len() {
        let known = template.names();
        let extra = stored_tensors
            .iter()
            .find(|(n, _)| !known.contains(n))
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        return Err(r.err(format!("unexpected tensor `{extra}`")));
    }
    let params = template.replace_with(ordered)?;
    Ok(Checkpoint {
        model: FusionModel {
            config: block.model,
            params,
        },
        meta: block.meta,
    })
}

