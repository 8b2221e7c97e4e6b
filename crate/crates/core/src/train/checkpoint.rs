use std::path::Path;

use sha2::{Digest, Sha256};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::backend::Tensor;
use crate::corpus::CharVocab;
use crate::error::{Error, Result};
use crate::mslm::{ModelConfig, Mslm, MslmParams};
use crate::scalar::Scalar;

const HEADER: &[u8] = b"seglm-ckpt v1\n";

/// Where a checkpoint came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// Fingerprint of the model and training configuration.
    pub config_hash: String,
    /// `hash@step` of the checkpoint training started from, or `none`.
    pub parent: String,
}

/// A model snapshot with its validation score and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: usize,
    pub model: Mslm<T>,
    pub vocab: CharVocab,
    /// Validation bits per character at this step.
    pub val_bpc: f64,
    pub train_config: TrainConfig,
    pub optimizer: Option<Adam<T>>,
    pub provenance: Provenance,
}

/// `config_hash` of a run.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let digest = Sha256::digest(format!("{}{}", model.to_text(), train.to_text()).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn put_blob(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &x in t.data() {
        x.write_le(out);
    }
}

struct Reader<'a> {
    rest: &'a [u8],
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.rest.len() < n {
            return Err(corrupt("unexpected end of file"));
        }
        let (a, b) = self.rest.split_at(n);
        self.rest = b;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a str> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| corrupt("blob too large"))?;
        std::str::from_utf8(self.take(n)?).map_err(|_| corrupt("blob is not UTF-8"))
    }

    fn values<T: Scalar>(&mut self, shape: &[usize], dtype: &str) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let data = match dtype {
            "f32" => self.take(n * 4)?.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            "f64" => self.take(n * 8)?.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
            other => return Err(corrupt(format!("unknown dtype {other:?}"))),
        };
        Tensor::new(shape.to_vec(), data)
    }
}

impl<T: Scalar> Checkpoint<T> {
    /// Header, then length-prefixed UTF-8 blocks (model config, vocabulary,
    /// provenance, training config), then every parameter tensor as
    /// `name, rank, dims, values` in model order, then the optimizer state.
    /// Values are little-endian in the width of `T`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = HEADER.to_vec();
        put_blob(&mut out, &self.model.config.to_text());
        put_blob(&mut out, &self.vocab.to_text());
        put_blob(
            &mut out,
            &format!(
                "step={}\nval_bpc={:?}\ndtype={}\nconfig_hash={}\nparent={}\n",
                self.step,
                self.val_bpc,
                T::DTYPE,
                self.provenance.config_hash,
                self.provenance.parent
            ),
        );
        put_blob(&mut out, &self.train_config.to_text());
        let params = &self.model.params;
        out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
        for (name, t) in params.names().iter().zip(params.tensors()) {
            put_blob(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_values(&mut out, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.t.to_le_bytes());
                for t in a.m.iter().chain(&a.v) {
                    put_values(&mut out, t);
                }
            }
        }
        out
    }

    /// Reads a checkpoint of either float width, converting to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { rest: bytes };
        if r.take(HEADER.len())? != HEADER {
            return Err(corrupt("missing seglm-ckpt v1 header"));
        }
        let config = ModelConfig::from_text(r.blob()?)?;
        let vocab = CharVocab::from_text(r.blob()?)?;
        let mut prov = crate::kv::parse(r.blob()?, "checkpoint")?;
        let step: usize = prov.get("step")?;
        let val_bpc: f64 = prov.get("val_bpc")?;
        let dtype = prov.get_str("dtype")?;
        let provenance = Provenance {
            config_hash: prov.get_str("config_hash")?,
            parent: prov.get_str("parent")?,
        };
        prov.finish()?;
        let train_config = TrainConfig::from_text(r.blob()?)?;
        if vocab.len() != config.vocab_size {
            return Err(corrupt(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }

        let count = r.u32()? as usize;
        let (mut names, mut tensors) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            names.push(r.blob()?.to_owned());
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(corrupt(format!("tensor rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            tensors.push(r.values(&shape, &dtype)?);
        }
        let params = MslmParams::from_parts(&config, names, tensors)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let mut read_all = || {
                    params
                        .tensors()
                        .iter()
                        .map(|p| r.values(p.shape(), &dtype))
                        .collect::<Result<Vec<Tensor<T>>>>()
                };
                let m = read_all()?;
                let v = read_all()?;
                Some(Adam { t, m, v })
            }
            f => return Err(corrupt(format!("bad optimizer flag {f}"))),
        };
        if !r.rest.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", r.rest.len())));
        }
        Ok(Checkpoint {
            step,
            model: Mslm { config, params },
            vocab,
            val_bpc,
            train_config,
            optimizer,
            provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Identifier recorded as the parent of runs started from here.
    pub fn id(&self) -> String {
        format!("{}@{}", self.provenance.config_hash, self.step)
    }
}
