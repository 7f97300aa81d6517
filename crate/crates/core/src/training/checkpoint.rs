//! Binary checkpoint archive.
//!
//! Layout: magic, format version (u32 LE), header length (u64 LE), JSON
//! header, raw little-endian tensor data in header order, then the SHA-256
//! of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{make_schedule, Denoiser, DenoiserConfig};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::image::{read_file, write_file};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::plan::TrainPlan;
use crate::training::state::TrainState;

pub const MAGIC: &[u8; 8] = b"OBJCOMP\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamWConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    plan: TrainPlan,
    encoder: EncoderConfig,
    denoiser: DenoiserConfig,
    timesteps: usize,
    epoch: usize,
    step: u64,
    opt_encoder: OptimizerMeta,
    opt_denoiser: OptimizerMeta,
    tensors: Vec<TensorMeta>,
}

fn push_tensor<T: Scalar>(name: String, t: &Tensor<T>, metas: &mut Vec<TensorMeta>, data: &mut Vec<u8>) {
    metas.push(TensorMeta {
        name,
        shape: t.shape().to_vec(),
    });
    for &v in t.data() {
        if T::DTYPE == "f32" {
            data.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        } else {
            data.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
}

fn push_model<T: Scalar>(prefix: &str, store: &ParamStore<T>, opt: &AdamW<T>, metas: &mut Vec<TensorMeta>, data: &mut Vec<u8>) {
    for (i, e) in store.entries().iter().enumerate() {
        push_tensor(format!("{prefix}/{}", e.name), &e.value, metas, data);
        push_tensor(format!("{prefix}/{}#m", e.name), &opt.m[i], metas, data);
        push_tensor(format!("{prefix}/{}#v", e.name), &opt.v[i], metas, data);
    }
}

/// Serializes a trainer state to bytes.
pub fn checkpoint_bytes<T: Scalar>(state: &TrainState<T>) -> Result<Vec<u8>> {
    let mut metas = Vec::new();
    let mut data = Vec::new();
    push_model("encoder", state.encoder.params(), &state.opt_encoder, &mut metas, &mut data);
    push_model("denoiser", state.denoiser.params(), &state.opt_denoiser, &mut metas, &mut data);
    let header = Header {
        dtype: T::DTYPE.to_string(),
        plan: state.plan.clone(),
        encoder: state.encoder.config().clone(),
        denoiser: state.denoiser.config().clone(),
        timesteps: state.schedule.len(),
        epoch: state.epoch,
        step: state.step,
        opt_encoder: OptimizerMeta {
            config: state.opt_encoder.config,
            step: state.opt_encoder.step,
        },
        opt_denoiser: OptimizerMeta {
            config: state.opt_denoiser.config,
            step: state.opt_denoiser.step,
        },
        tensors: metas,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + data.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, &checkpoint_bytes(state)?)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    width: usize,
}

impl Reader<'_> {
    fn tensor<T: Scalar>(&mut self, meta: &TensorMeta) -> Result<Tensor<T>> {
        let n: usize = meta.shape.iter().product();
        let bytes = n * self.width;
        let chunk = self
            .data
            .get(self.pos..self.pos + bytes)
            .ok_or_else(|| Error::Format(format!("tensor {} runs past the data section", meta.name)))?;
        self.pos += bytes;
        let vals = chunk
            .chunks_exact(self.width)
            .map(|b| {
                if self.width == 4 {
                    T::c(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                } else {
                    T::c(f64::from_le_bytes(b.try_into().expect("8 bytes")))
                }
            })
            .collect();
        Tensor::from_vec(&meta.shape, vals)
    }
}

fn load_model<T: Scalar>(
    prefix: &str,
    store: &mut ParamStore<T>,
    opt: &mut AdamW<T>,
    metas: &mut std::slice::Iter<'_, TensorMeta>,
    reader: &mut Reader<'_>,
) -> Result<()> {
    for i in 0..store.len() {
        let expect = store.entries()[i].name.clone();
        for (suffix, slot) in [("", 0), ("#m", 1), ("#v", 2)] {
            let meta = metas
                .next()
                .ok_or_else(|| Error::Format(format!("missing tensor for {prefix}/{expect}")))?;
            let want = format!("{prefix}/{expect}{suffix}");
            if meta.name != want {
                return Err(Error::Format(format!("expected tensor {want}, found {}", meta.name)));
            }
            let t = reader.tensor::<T>(meta)?;
            let target = match slot {
                0 => &mut store.entries_mut()[i].value,
                1 => &mut opt.m[i],
                _ => &mut opt.v[i],
            };
            if target.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "{want}: stored shape {:?}, model shape {:?}",
                    t.shape(),
                    target.shape()
                )));
            }
            *target = t;
        }
    }
    Ok(())
}

/// Parses checkpoint bytes. The checksum is verified before anything else
/// is interpreted.
pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<TrainState<T>> {
    let min = MAGIC.len() + 12 + DIGEST_LEN;
    if bytes.len() < min {
        return Err(Error::Integrity(format!("file is {} bytes, shorter than any checkpoint", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body)[..] != digest[..] {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body
        .get(20..20 + hlen)
        .ok_or_else(|| Error::Format("header runs past end of file".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "checkpoint holds {} values, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let width = if header.dtype == "f32" { 4 } else { 8 };

    let mut encoder = Encoder::<T>::new(header.encoder.clone(), 0)?;
    let mut denoiser = Denoiser::<T>::new(header.denoiser.clone(), 0)?;
    let mut opt_encoder = AdamW::new(header.opt_encoder.config, encoder.params());
    let mut opt_denoiser = AdamW::new(header.opt_denoiser.config, denoiser.params());
    opt_encoder.step = header.opt_encoder.step;
    opt_denoiser.step = header.opt_denoiser.step;

    let mut reader = Reader {
        data: &body[20 + hlen..],
        pos: 0,
        width,
    };
    let mut metas = header.tensors.iter();
    load_model("encoder", encoder.params_mut(), &mut opt_encoder, &mut metas, &mut reader)?;
    load_model("denoiser", denoiser.params_mut(), &mut opt_denoiser, &mut metas, &mut reader)?;
    if metas.next().is_some() || reader.pos != reader.data.len() {
        return Err(Error::Format("trailing tensors in checkpoint".into()));
    }

    let mut state = TrainState {
        plan: header.plan,
        schedule: make_schedule(header.timesteps)?,
        encoder,
        denoiser,
        opt_encoder,
        opt_denoiser,
        epoch: header.epoch,
        step: header.step,
    };
    state.apply_freeze();
    Ok(state)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<TrainState<T>> {
    checkpoint_from_bytes(&read_file(path)?)
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}
