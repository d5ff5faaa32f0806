//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! b"DHGC"  u32 version
//! u32 len  config text (key=value lines; model config, meta.*, config_hash)
//! u32 count
//! count × { u32 len, name bytes, u32 rank, rank × u64 dim, f64 values }
//! ```
//!
//! Parameters named `probe.*` belong to the linear probe head; all others
//! must exist in the layout implied by the model config.

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"DHGC";
pub const FORMAT_VERSION: u32 = 1;
const PROBE_PREFIX: &str = "probe.";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("config hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Linear classifier over standardized descriptors:
/// `logits = ((d - shift) ⊙ scale)·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHead {
    pub params: ParamStore,
}

impl ProbeHead {
    pub const WEIGHT: &'static str = "probe.w";
    pub const BIAS: &'static str = "probe.b";
    pub const SHIFT: &'static str = "probe.shift";
    pub const SCALE: &'static str = "probe.scale";

    pub fn classes(&self) -> usize {
        self.tensor(Self::BIAS).numel()
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        self.params
            .value(self.params.id(name).expect("probe parameter present"))
    }

    /// Standardized descriptor, ready for the linear map.
    pub fn standardize(&self, descriptor: &[f64]) -> Vec<f64> {
        let shift = self.tensor(Self::SHIFT).data();
        let scale = self.tensor(Self::SCALE).data();
        descriptor
            .iter()
            .zip(shift)
            .zip(scale)
            .map(|((d, m), s)| (d - m) * s)
            .collect()
    }

    pub fn logits(&self, descriptor: &[f64]) -> Vec<f64> {
        let x = self.standardize(descriptor);
        let w = self.tensor(Self::WEIGHT);
        let b = self.tensor(Self::BIAS).data();
        let k = b.len();
        let mut out = b.to_vec();
        for (row, xv) in x.iter().enumerate() {
            for (o, wv) in out.iter_mut().zip(&w.data()[row * k..(row + 1) * k]) {
                *o += xv * wv;
            }
        }
        out
    }

    pub fn predict(&self, descriptor: &[f64]) -> usize {
        let logits = self.logits(descriptor);
        logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &x)| {
                if x > best.1 {
                    (k, x)
                } else {
                    best
                }
            })
            .0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub probe: Option<ProbeHead>,
    /// Training metadata as ordered key/value pairs.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            probe: None,
            meta: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config_text = self.model.config().to_text();
        let mut text = config_text.clone();
        for (k, v) in &self.meta {
            text.push_str(&format!("meta.{k}={v}\n"));
        }
        text.push_str(&format!("config_hash={}\n", config_hash(&config_text)));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_bytes(&mut out, text.as_bytes());
        let mut records: Vec<(&str, &Tensor)> = Vec::new();
        let stores =
            std::iter::once(self.model.params()).chain(self.probe.iter().map(|p| &p.params));
        for store in stores {
            for id in store.ids() {
                records.push((store.name(id), store.value(id)));
            }
        }
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let text_len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(text_len, "config text")?)
            .map_err(|_| CheckpointError::Malformed("config text is not UTF-8".into()))?;
        let mut config_lines = String::new();
        let mut meta = Vec::new();
        let mut stored_hash = None;
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Malformed(format!("config line {line:?}")))?;
            if let Some(key) = k.strip_prefix("meta.") {
                meta.push((key.to_string(), v.to_string()));
            } else if k == "config_hash" {
                stored_hash = Some(v.to_string());
            } else {
                config_lines.push_str(line);
                config_lines.push('\n');
            }
        }
        let config = ModelConfig::from_text(&config_lines)?;
        let computed = config_hash(&config.to_text());
        match stored_hash {
            Some(stored) if stored == computed => {}
            Some(stored) => return Err(CheckpointError::HashMismatch { stored, computed }.into()),
            None => return Err(CheckpointError::Malformed("missing config_hash".into()).into()),
        }

        let layout = Model::new(config.clone())?;
        let mut backbone = ParamStore::new();
        let mut probe = ParamStore::new();
        let count = r.u32("parameter count")?;
        for _ in 0..count {
            let name_len = r.u32("parameter name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("parameter rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("parameter dims")? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(
                numel
                    .checked_mul(8)
                    .ok_or(CheckpointError::Truncated("values"))?,
                "parameter values",
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            let tensor = Tensor::new(shape, data)?;
            if name.starts_with(PROBE_PREFIX) {
                if ![
                    ProbeHead::WEIGHT,
                    ProbeHead::BIAS,
                    ProbeHead::SHIFT,
                    ProbeHead::SCALE,
                ]
                .contains(&name.as_str())
                {
                    return Err(CheckpointError::UnknownParam(name).into());
                }
                probe.insert(&name, tensor)?;
            } else {
                if layout.params().id(&name).is_none() {
                    return Err(CheckpointError::UnknownParam(name).into());
                }
                backbone.insert(&name, tensor)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()).into());
        }
        let model = Model::from_params(config, backbone)?;
        let probe = match probe.len() {
            0 => None,
            4 => Some(ProbeHead { params: probe }),
            n => {
                return Err(CheckpointError::Malformed(format!(
                    "probe head has {n} of 4 parameters"
                ))
                .into())
            }
        };
        Ok(Self { model, probe, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// FNV-1a over the config text, as 16 hex digits.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("four bytes"),
        ))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("eight bytes"),
        ))
    }
}
