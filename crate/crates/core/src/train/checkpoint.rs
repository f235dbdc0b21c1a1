//! Binary checkpoint: `FCBF`, u32 version, u64 header length, JSON header,
//! then little-endian tensor data at the offsets listed in the header.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use crate::error::{CheckpointErrorKind as Kind, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Float, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"FCBF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    pub val_mdice: f64,
    pub optimizer: OptimizerState,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub val_mdice: f64,
    pub optimizer: OptimizerState,
    pub seed: u64,
    pub params: ParamStore<f32>,
    /// First and second Adam moments, if saved.
    pub moments: Option<(BTreeMap<String, Tensor<f32>>, BTreeMap<String, Tensor<f32>>)>,
}

const M_PREFIX: &str = "optim.m.";
const V_PREFIX: &str = "optim.v.";

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParamStore<f32>, seed: u64) -> Self {
        Checkpoint {
            config,
            epoch: 0,
            val_mdice: 0.0,
            optimizer: OptimizerState { config: AdamWConfig::default(), step: 0 },
            seed,
            params,
            moments: None,
        }
    }

    pub fn with_optimizer(mut self, opt: &AdamW<f32>, keep_moments: bool) -> Self {
        self.optimizer = OptimizerState { config: opt.cfg, step: opt.step };
        self.moments = keep_moments.then(|| (opt.m.clone(), opt.v.clone()));
        self
    }

    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> =
            self.params.iter().map(|(n, p)| (n.to_string(), p.value())).collect();
        if let Some((m, v)) = &self.moments {
            out.extend(m.iter().map(|(n, t)| (format!("{M_PREFIX}{n}"), t)));
            out.extend(v.iter().map(|(n, t)| (format!("{V_PREFIX}{n}"), t)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for (name, t) in &tensors {
            let nbytes = (t.numel() * 4) as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: dtype_name(DType::F32).into(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let header = CheckpointHeader {
            config: self.config.clone(),
            epoch: self.epoch,
            val_mdice: self.val_mdice,
            optimizer: self.optimizer.clone(),
            seed: self.seed,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            out.extend_from_slice(&f32::to_le_bytes_vec(t.data()));
        }
        Ok(out)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::checkpoint(Kind::Truncated, "file shorter than the magic bytes"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::checkpoint(Kind::BadMagic, "not a checkpoint file"));
        }
        if bytes.len() < 16 {
            return Err(Error::checkpoint(Kind::Truncated, "incomplete preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::checkpoint(
                Kind::VersionMismatch,
                format!("format version {version}, this build reads {VERSION}"),
            ));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(Error::checkpoint(Kind::Truncated, "header cut short"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::checkpoint(Kind::MalformedHeader, e.to_string()))?;
        let data = &body[hlen..];
        let mut params = ParamStore::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        for e in &header.tensors {
            if e.dtype != "f32" {
                return Err(Error::checkpoint(Kind::MalformedHeader, format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let numel: usize = e.shape.iter().product();
            if e.nbytes != (numel * 4) as u64 {
                return Err(Error::checkpoint(Kind::MalformedHeader, format!("{}: size disagrees with shape", e.name)));
            }
            let end = e.offset.checked_add(e.nbytes).filter(|&end| end as usize <= data.len()).ok_or_else(|| {
                Error::checkpoint(Kind::Truncated, format!("data for `{}` cut short", e.name))
            })?;
            let values = f32::from_le_bytes_slice(&data[e.offset as usize..end as usize]);
            let t = Tensor::new(&e.shape, values).map_err(|err| Error::checkpoint(Kind::MalformedHeader, err.to_string()))?;
            if let Some(n) = e.name.strip_prefix(M_PREFIX) {
                m.insert(n.to_string(), t);
            } else if let Some(n) = e.name.strip_prefix(V_PREFIX) {
                v.insert(n.to_string(), t);
            } else {
                params.insert(e.name.clone(), t);
            }
        }
        let moments = (!m.is_empty() || !v.is_empty()).then_some((m, v));
        let ckpt = Checkpoint {
            config: header.config,
            epoch: header.epoch,
            val_mdice: header.val_mdice,
            optimizer: header.optimizer,
            seed: header.seed,
            params,
            moments,
        };
        ckpt.check_against(&ckpt.config.clone())?;
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and verifies that the stored tensors fit `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let c = Self::load(path)?;
        c.check_against(expected)?;
        Ok(c)
    }

    /// Every parameter of a model built from `cfg` must be present with the
    /// same shape, with nothing extra, and the input size must agree.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        if self.config.input_hw != cfg.input_hw {
            return Err(Error::checkpoint(
                Kind::ShapeMismatch,
                format!("checkpoint input size {:?}, requested {:?}", self.config.input_hw, cfg.input_hw),
            ));
        }
        let model = Model::new(cfg)?;
        let reference: ParamStore<f32> = model.init_params(0);
        for (name, p) in reference.iter() {
            match self.params.get(name) {
                Ok(t) if t.shape() == p.value().shape() => {}
                Ok(t) => {
                    return Err(Error::checkpoint(
                        Kind::ShapeMismatch,
                        format!("`{name}`: stored {:?}, config expects {:?}", t.shape(), p.value().shape()),
                    ))
                }
                Err(_) => return Err(Error::checkpoint(Kind::ShapeMismatch, format!("`{name}` missing"))),
            }
        }
        if let Some(extra) = self.params.names().find(|n| !reference.contains(n)) {
            return Err(Error::checkpoint(Kind::ShapeMismatch, format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    /// Restores an optimizer with its saved step and moments.
    pub fn optimizer(&self) -> AdamW<f32> {
        let mut opt = AdamW::new(self.optimizer.config);
        opt.step = self.optimizer.step;
        if let Some((m, v)) = &self.moments {
            opt.m = m.clone();
            opt.v = v.clone();
        }
        opt
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn toy_ckpt() -> Checkpoint {
        let cfg = ModelConfig::toy_64();
        let mut c = Checkpoint::new(cfg.clone(), init_params(&cfg, 9).unwrap(), 9);
        c.epoch = 3;
        c.val_mdice = 0.625;
        c
    }

    #[test]
    fn round_trip_preserves_everything() {
        let c = toy_ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!((back.epoch, back.val_mdice, back.seed), (3, 0.625, 9));
        assert_eq!(back.config, c.config);
        assert_eq!(back.params.len(), c.params.len());
        for ((n1, p1), (n2, p2)) in c.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.value(), p2.value());
        }
    }

    #[test]
    fn moments_round_trip() {
        let mut opt = AdamW::<f32>::new(AdamWConfig::default());
        opt.step = 4;
        opt.m.insert("ph.out.bias".into(), Tensor::full(&[1], 0.25));
        opt.v.insert("ph.out.bias".into(), Tensor::full(&[1], 0.5));
        let c = toy_ckpt().with_optimizer(&opt, true);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap().optimizer();
        assert_eq!(back.step, 4);
        assert_eq!(back.m["ph.out.bias"].data(), &[0.25]);
        assert_eq!(back.v["ph.out.bias"].data(), &[0.5]);
    }

    fn kind(r: Result<Checkpoint>) -> Kind {
        match r {
            Err(Error::Checkpoint { kind, .. }) => kind,
            other => panic!("expected checkpoint error, got {:?}", other.map(|c| c.epoch)),
        }
    }

    #[test]
    fn distinct_error_kinds() {
        let bytes = toy_ckpt().to_bytes().unwrap();
        assert_eq!(kind(Checkpoint::from_bytes(&bytes[..bytes.len() - 3])), Kind::Truncated);
        assert_eq!(kind(Checkpoint::from_bytes(&bytes[..40])), Kind::Truncated);
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert_eq!(kind(Checkpoint::from_bytes(&wrong_version)), Kind::VersionMismatch);
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert_eq!(kind(Checkpoint::from_bytes(&bad_magic)), Kind::BadMagic);
        let mut bad_json = bytes.clone();
        bad_json[16] = b'#';
        assert_eq!(kind(Checkpoint::from_bytes(&bad_json)), Kind::MalformedHeader);
    }

    #[test]
    fn toy_checkpoint_rejected_for_full_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ckpt");
        toy_ckpt().save(&path).unwrap();
        let full_at_64 = ModelConfig::full_352().with_input_hw(64, 64);
        assert_eq!(kind(Checkpoint::load_expecting(&path, &full_at_64)), Kind::ShapeMismatch);
        assert_eq!(kind(Checkpoint::load_expecting(&path, &ModelConfig::full_352())), Kind::ShapeMismatch);
        assert!(Checkpoint::load_expecting(&path, &ModelConfig::toy_64()).is_ok());
    }
}
