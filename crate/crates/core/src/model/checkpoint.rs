//! Binary checkpoint container.
//!
//! Layout: magic `MTCK`, a u32 format version, a UTF-8 `key = value`
//! config block, then named parameter records of little-endian f32 values.
//! Writers keep every value on the f32 grid, so save → load → save is
//! byte-identical.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{ModelConfig, ModelError, ModelParams, SeqModel};

const MAGIC: &[u8; 4] = b"MTCK";
const VERSION: u32 = 1;

/// A parsed checkpoint: config lines plus named f32 records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub records: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<T, ModelError> {
        let raw = self
            .get(key)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing config key {key}")))?;
        raw.parse()
            .map_err(|_| ModelError::Checkpoint(format!("bad value for {key}: {raw}")))
    }

    pub fn push_record(&mut self, name: &str, values: Vec<f32>) {
        self.records.push((name.to_string(), values));
    }

    pub fn record(&self, name: &str) -> Option<&[f32]> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut config_text = String::new();
        for (k, v) in &self.config {
            config_text.push_str(k);
            config_text.push_str(" = ");
            config_text.push_str(v);
            config_text.push('\n');
        }
        let config_bytes = config_text.as_bytes();

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(config_bytes);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, values) in &self.records {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| ModelError::Checkpoint("config block is not UTF-8".into()))?;
        let mut config = BTreeMap::new();
        for line in config_text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| {
                ModelError::Checkpoint(format!("malformed config line: {line}"))
            })?;
            config.insert(k.to_string(), v.to_string());
        }
        let n_records = r.u32()? as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::Checkpoint("record name is not UTF-8".into()))?
                .to_string();
            let count = r.u32()? as usize;
            let raw = r.take(count * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { config, records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

impl SeqModel {
    /// Serializes config and parameters (f32 records).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        let c = &self.config;
        ckpt.set("model.d_h", c.d_h);
        ckpt.set("model.d_h_s", c.d_h_s);
        ckpt.set("model.layers", c.layers);
        ckpt.set("model.heads", c.heads);
        ckpt.set("model.d_ff", c.d_ff);
        ckpt.set("model.vocab_size", c.vocab_size);
        ckpt.set("model.c_pos", c.c_pos);
        ckpt.set("model.c_ner", c.c_ner);
        ckpt.set("model.c_kt", c.c_kt);
        ckpt.set("model.max_len", c.max_len);
        self.params.for_each(&mut |name, values| {
            ckpt.push_record(name, values.iter().map(|&v| v as f32).collect());
        });
        ckpt
    }

    /// Rebuilds a model from a checkpoint; extra records (optimizer state
    /// and the like) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<SeqModel, ModelError> {
        let config = ModelConfig {
            d_h: ckpt.get_parsed("model.d_h")?,
            d_h_s: ckpt.get_parsed("model.d_h_s")?,
            layers: ckpt.get_parsed("model.layers")?,
            heads: ckpt.get_parsed("model.heads")?,
            d_ff: ckpt.get_parsed("model.d_ff")?,
            vocab_size: ckpt.get_parsed("model.vocab_size")?,
            c_pos: ckpt.get_parsed("model.c_pos")?,
            c_ner: ckpt.get_parsed("model.c_ner")?,
            c_kt: ckpt.get_parsed("model.c_kt")?,
            max_len: ckpt.get_parsed("model.max_len")?,
        };
        config.validate()?;
        let mut params = ModelParams::zeros(&config);
        let mut missing = Vec::new();
        params.for_each_mut(&mut |name, values| {
            match ckpt.record(name) {
                Some(rec) if rec.len() == values.len() => {
                    for (v, &r) in values.iter_mut().zip(rec) {
                        *v = r as f64;
                    }
                }
                Some(_) | None => missing.push(name.to_string()),
            }
        });
        if !missing.is_empty() {
            return Err(ModelError::Checkpoint(format!(
                "missing or misshapen records: {}",
                missing.join(", ")
            )));
        }
        Ok(SeqModel { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_checkpoint(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<SeqModel, ModelError> {
        SeqModel::from_checkpoint(&read_checkpoint(path)?)
    }
}
