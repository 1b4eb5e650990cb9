//! `PNCK` checkpoint files.
//!
//! Layout (little-endian): magic `PNCK`, u16 version, u32-length-prefixed
//! UTF-8 `key = value` blob, then a u32 tensor count followed by named
//! tensors (u32 name length, name, u32 rank, u32 dims, f32 data).

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io_util::Reader;
use crate::kv;
use crate::model::{ModelConfig, PredNetModel};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PNCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PredNetModel<f32>,
    pub optimizer: Option<Adam<f32>>,
    /// Free-form hyperparameters stored alongside (e.g. the training config).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: PredNetModel<f32>) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.as_ref().map_or(0, |o| o.step)
    }

    fn blob(&self) -> BTreeMap<String, String> {
        let mut map = self.meta.clone();
        map.extend(model_config_to_kv(self.model.config()));
        if let Some(opt) = &self.optimizer {
            map.insert("adam.lr".into(), opt.config.lr.to_string());
            map.insert("adam.beta1".into(), opt.config.beta1.to_string());
            map.insert("adam.beta2".into(), opt.config.beta2.to_string());
            map.insert("adam.eps".into(), opt.config.eps.to_string());
            map.insert("adam.step".into(), opt.step.to_string());
        }
        map
    }

    /// SHA-256 (hex) of the configuration blob.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(kv::render(&self.blob()).as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn model_config_to_kv(cfg: &ModelConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("model.channels".to_string(), kv::join(&cfg.channels)),
        ("model.height".to_string(), cfg.height.to_string()),
        ("model.width".to_string(), cfg.width.to_string()),
        ("model.kernel".to_string(), cfg.kernel.to_string()),
        ("model.layer_loss".to_string(), kv::join(&cfg.layer_loss)),
    ])
}

pub fn model_config_from_kv(map: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| {
        map.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("config blob lacks `{k}`")))
    };
    let cfg = ModelConfig {
        channels: kv::parse_list("model.channels", get("model.channels")?)?,
        height: kv::parse_value("model.height", get("model.height")?)?,
        width: kv::parse_value("model.width", get("model.width")?)?,
        kernel: kv::parse_value("model.kernel", get("model.kernel")?)?,
        layer_loss: kv::parse_list("model.layer_loss", get("model.layer_loss")?)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let blob = kv::render(&ck.blob());
    let named = ck.model.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob.as_bytes());
    let n_opt = if ck.optimizer.is_some() { 2 * named.len() } else { 0 };
    out.extend_from_slice(&((named.len() + n_opt) as u32).to_le_bytes());
    for (name, t) in &named {
        put_tensor(&mut out, name, t);
    }
    if let Some(opt) = &ck.optimizer {
        for ((name, _), m) in named.iter().zip(&opt.m) {
            put_tensor(&mut out, &format!("adam.m/{name}"), m);
        }
        for ((name, _), v) in named.iter().zip(&opt.v) {
            put_tensor(&mut out, &format!("adam.v/{name}"), v);
        }
    }
    out
}

fn corrupt(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::CorruptCheckpoint(format!("truncated: {msg}")),
        other => other,
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    decode_inner(bytes).map_err(corrupt)
}

fn decode_inner(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let blob_len = r.u32()? as usize;
    let blob = std::str::from_utf8(r.take(blob_len)?)
        .map_err(|_| Error::CorruptCheckpoint("config blob is not UTF-8".into()))?;
    let mut meta = kv::parse(blob)?;
    let config = model_config_from_kv(&meta)?;

    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::CorruptCheckpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        if len.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(Error::CorruptCheckpoint(format!("truncated: tensor `{name}` data")));
        }
        let data = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::CorruptCheckpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.remaining())));
    }

    let mut model = PredNetModel::<f32>::zeros(config)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut take = |name: &str, expected: &[usize]| -> Result<Tensor<f32>> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != expected {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    };
    for (name, p) in names.iter().zip(model.params_mut()) {
        *p = take(name, p.shape())?;
    }

    let optimizer = if let Some(step) = meta.remove("adam.step") {
        let mut get = |k: &str| -> Result<f64> {
            let v = meta
                .remove(k)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("config blob lacks `{k}`")))?;
            kv::parse_value(k, &v)
        };
        let config = AdamConfig {
            lr: get("adam.lr")?,
            beta1: get("adam.beta1")?,
            beta2: get("adam.beta2")?,
            eps: get("adam.eps")?,
        };
        let shapes: Vec<Vec<usize>> = model.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let m = names
            .iter()
            .zip(&shapes)
            .map(|(n, s)| take(&format!("adam.m/{n}"), s))
            .collect::<Result<_>>()?;
        let v = names
            .iter()
            .zip(&shapes)
            .map(|(n, s)| take(&format!("adam.v/{n}"), s))
            .collect::<Result<_>>()?;
        Some(Adam {
            config,
            m,
            v,
            step: kv::parse_value("adam.step", &step)?,
        })
    } else {
        None
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::CorruptCheckpoint(format!("unexpected tensor `{extra}`")));
    }
    for k in model_config_to_kv(model.config()).keys() {
        meta.remove(k);
    }
    Ok(Checkpoint { model, optimizer, meta })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::atomic_write(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Load and check that every parameter has the shape `expected` implies.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    check_shapes(&ck.model, expected)?;
    Ok(ck)
}

/// First parameter whose shape differs between `model` and a model built from `expected`.
pub fn check_shapes(model: &PredNetModel<f32>, expected: &ModelConfig) -> Result<()> {
    let reference = PredNetModel::<f32>::zeros(expected.clone())?;
    let have: BTreeMap<String, Vec<usize>> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    for (name, t) in reference.named_params() {
        let found = have.get(&name).cloned().unwrap_or_default();
        if found != t.shape() {
            return Err(Error::TensorShape {
                name,
                expected: t.shape().to_vec(),
                found,
            });
        }
    }
    if have.len() != reference.named_params().len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} parameter tensors, expected {}",
            have.len(),
            reference.named_params().len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TINY_CHANNELS;

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: TINY_CHANNELS.to_vec(),
            height: 16,
            width: 12,
            ..Default::default()
        }
    }

    fn checkpoint() -> Checkpoint {
        let model = PredNetModel::<f32>::init(tiny(), 3).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), model.named_params().into_iter().map(|(_, t)| t));
        opt.step = 7;
        opt.m[0].data_mut()[0] = 0.25;
        let mut ck = Checkpoint::new(model);
        ck.optimizer = Some(opt);
        ck.meta.insert("train.seed".into(), "9".into());
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = checkpoint();
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back.config_hash(), ck.config_hash());
    }

    #[test]
    fn truncation_is_structured() {
        let bytes = encode_checkpoint(&checkpoint());
        for cut in [0, 3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CorruptCheckpoint(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&checkpoint());
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn different_preset_names_tensor() {
        let model = PredNetModel::<f32>::zeros(tiny()).unwrap();
        let other = ModelConfig {
            channels: vec![1, 4, 16, 8],
            ..tiny()
        };
        match check_shapes(&model, &other).unwrap_err() {
            Error::TensorShape { name, .. } => assert_eq!(name, "layer1.cell.w_input"),
            e => panic!("unexpected {e}"),
        }
    }
}
