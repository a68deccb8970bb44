//! Binary checkpoints.
//!
//! Layout: the magic bytes `SANASCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header of that length,
//! then a payload of little-endian `f64` values. The header lists every tensor
//! with its offset and length in the payload, and the payload's SHA-256.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::FeatureNorm;
use crate::config::RunConfig;
use crate::controller::SanasModel;
use crate::error::{Result, SanasError};
use crate::eval::EvalMode;
use crate::numcore::{ParamStore, Tensor};
use crate::supernet::{ArchSample, GraphDescription};
use crate::training::TrainState;

pub const MAGIC: &[u8; 9] = b"SANASCKPT";
pub const VERSION: u32 = 1;

const NORM_MEAN: &str = "norm/mean";
const NORM_STD: &str = "norm/std";
const BASELINE: &str = "state/baseline";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    seed: String,
    stream: u64,
    /// `u128` does not survive every JSON reader, so it is kept as a decimal string.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    graph: GraphDescription,
    config: RunConfig,
    config_hash: String,
    step: u64,
    epoch: usize,
    rng: RngHeader,
    static_arch: Option<Vec<bool>>,
    tensors: Vec<TensorEntry>,
    payload_len: u64,
    payload_sha256: String,
}

/// A training snapshot: parameters, optimizer moments, baseline, RNG position
/// and the feature normalisation the model was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub graph: GraphDescription,
    pub config: RunConfig,
    pub state: TrainState,
    pub norm: FeatureNorm,
    /// Edge mask of a statically trained sub-graph; `None` for controller runs.
    pub static_arch: Option<Vec<bool>>,
}

fn format_err(msg: impl Into<String>) -> SanasError {
    SanasError::Format(msg.into())
}

fn parse_seed(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(s, &mut out).map_err(|e| format_err(format!("rng seed: {e}")))?;
    Ok(out)
}

impl Checkpoint {
    pub fn model(&self) -> Result<SanasModel> {
        self.config.build_model(&self.graph)
    }

    /// How this checkpoint should be scored.
    pub fn eval_mode(&self, model: &SanasModel) -> Result<EvalMode> {
        Ok(match &self.static_arch {
            Some(bits) => EvalMode::Static(ArchSample::from_edges(model.spec(), bits.clone())?),
            None => EvalMode::Argmax,
        })
    }

    /// Fails with a format error when `graph` is not the graph this checkpoint was trained on.
    pub fn check_graph(&self, graph: &GraphDescription) -> Result<()> {
        if &self.graph != graph {
            return Err(format_err(format!(
                "checkpoint was trained on graph {:?}, not {:?}",
                self.graph.name, graph.name
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, shape: &[usize], data: &[f64]| {
            tensors.push(TensorEntry {
                name,
                shape: shape.to_vec(),
                offset: (payload.len() / 8) as u64,
                len: data.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        let params = &self.state.params;
        for (name, t) in params.iter() {
            push(format!("param/{name}"), t.shape(), t.data());
        }
        for (name, _) in params.iter() {
            let (m, v) = params.moments(name)?;
            push(format!("adam.m/{name}"), m.shape(), m.data());
            push(format!("adam.v/{name}"), v.shape(), v.data());
        }
        push(NORM_MEAN.into(), &[self.norm.mean.len()], &self.norm.mean);
        push(NORM_STD.into(), &[self.norm.std.len()], &self.norm.std);
        push(BASELINE.into(), &[1], &[self.state.baseline]);

        let rng = &self.state.rng;
        let header = Header {
            graph: self.graph.clone(),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            step: self.state.step,
            epoch: self.state.epoch,
            rng: RngHeader {
                seed: hex::encode(rng.get_seed()),
                stream: rng.get_stream(),
                word_pos: rng.get_word_pos().to_string(),
            },
            static_arch: self.static_arch.clone(),
            tensors,
            payload_len: payload.len() as u64,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err(format!("header: {e}")))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| format_err("not a checkpoint (bad magic)"))?;
        if rest.len() < 12 {
            return Err(format_err("truncated checkpoint header"));
        }
        let version = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(rest[4..12].try_into().expect("8 bytes"));
        let rest = &rest[12..];
        let header_len = usize::try_from(header_len)
            .ok()
            .filter(|&n| n <= rest.len())
            .ok_or_else(|| format_err("truncated checkpoint header"))?;
        let header: Header =
            serde_json::from_slice(&rest[..header_len]).map_err(|e| format_err(format!("checkpoint header: {e}")))?;
        let payload = &rest[header_len..];
        if payload.len() as u64 != header.payload_len {
            return Err(format_err(format!(
                "payload is {} bytes, header says {}",
                payload.len(),
                header.payload_len
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(format_err("payload checksum mismatch"));
        }
        if header.config.hash() != header.config_hash {
            return Err(format_err("config hash mismatch"));
        }

        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = |e: &TensorEntry| -> Result<Tensor> {
            let (start, len) = (e.offset as usize, e.len as usize);
            let data = start
                .checked_add(len)
                .and_then(|end| values.get(start..end))
                .ok_or_else(|| format_err(format!("tensor {:?} lies outside the payload", e.name)))?;
            Tensor::new(e.shape.clone(), data.to_vec()).map_err(|err| format_err(format!("tensor {:?}: {err}", e.name)))
        };

        let mut params = ParamStore::new();
        let mut moments = Vec::new();
        let mut norm = FeatureNorm { mean: Vec::new(), std: Vec::new() };
        let mut baseline = None;
        for e in &header.tensors {
            let t = tensor(e)?;
            if let Some(name) = e.name.strip_prefix("param/") {
                params.insert(name, t).map_err(|err| format_err(err.to_string()))?;
            } else if let Some(name) = e.name.strip_prefix("adam.m/") {
                moments.push((name.to_string(), t, None));
            } else if let Some(name) = e.name.strip_prefix("adam.v/") {
                match moments.iter_mut().find(|(n, _, v)| n == name && v.is_none()) {
                    Some(slot) => slot.2 = Some(t),
                    None => return Err(format_err(format!("second moment for {name:?} without a first"))),
                }
            } else if e.name == NORM_MEAN {
                norm.mean = t.into_data();
            } else if e.name == NORM_STD {
                norm.std = t.into_data();
            } else if e.name == BASELINE {
                baseline = t.data().first().copied();
            } else {
                return Err(format_err(format!("unknown tensor {:?}", e.name)));
            }
        }
        for (name, m, v) in moments {
            let v = v.ok_or_else(|| format_err(format!("missing second moment for {name:?}")))?;
            params.set_moments(&name, m, v).map_err(|err| format_err(err.to_string()))?;
        }
        let baseline = baseline.ok_or_else(|| format_err("missing baseline"))?;
        if norm.mean.is_empty() || norm.mean.len() != norm.std.len() {
            return Err(format_err("missing or inconsistent feature normalisation"));
        }

        let word_pos: u128 = header.rng.word_pos.parse().map_err(|_| format_err("bad rng word position"))?;
        let mut rng = ChaCha8Rng::from_seed(parse_seed(&header.rng.seed)?);
        rng.set_stream(header.rng.stream);
        rng.set_word_pos(word_pos);

        let ckpt = Checkpoint {
            graph: header.graph,
            config: header.config,
            state: TrainState {
                params,
                baseline,
                step: header.step,
                epoch: header.epoch,
                rng,
            },
            norm,
            static_arch: header.static_arch,
        };
        let model = ckpt.model().map_err(|e| format_err(format!("checkpoint model: {e}")))?;
        model
            .check_params(&ckpt.state.params)
            .map_err(|e| format_err(format!("checkpoint parameters: {e}")))?;
        if norm_len(&ckpt) != model.spec().input_layer().shape[1] {
            return Err(format_err("feature normalisation does not match the model input"));
        }
        ckpt.eval_mode(&model).map_err(|e| format_err(format!("static architecture: {e}")))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| SanasError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SanasError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn norm_len(c: &Checkpoint) -> usize {
    c.norm.mean.len()
}
