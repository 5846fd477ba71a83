//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE header length,
//! JSON header, little-endian `f32` payload, `u64` LE FNV-1a checksum of the
//! payload bytes.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::{AdamConfig, AdamState};
use super::layers::Layer;
use super::network::{Network, NetworkSpec};
use super::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::hash::fnv1a;
use crate::Scalar;

pub const MAGIC: &[u8; 8] = b"DBIQACKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint tensor {name}: {detail}")]
    Tensor { name: String, detail: String },
}

impl CheckpointError {
    /// Stable short code per failure class.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "bad_magic",
            CheckpointError::Version { .. } => "version",
            CheckpointError::Truncated(_) => "truncated",
            CheckpointError::Checksum { .. } => "checksum",
            CheckpointError::Header(_) => "header",
            CheckpointError::Tensor { .. } => "tensor",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Serialized `ChaCha8Rng` position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed_hex = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed_hex, word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        use rand::SeedableRng;
        let bad = || CheckpointError::Header("invalid rng state".into());
        if self.seed_hex.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub step: u64,
    pub config: AdamConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerMeta>,
    pub rng: Option<RngState>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerMeta>,
    rng: Option<RngState>,
    meta: serde_json::Value,
}

fn buffer_names(layer_index: usize) -> [String; 2] {
    [format!("layer{layer_index}.running_mean"), format!("layer{layer_index}.running_var")]
}

impl Checkpoint {
    /// Captures parameters, batch-norm buffers and, optionally, the Adam
    /// moments of `net`.
    pub fn from_network<T: Scalar>(net: &Network<T>, adam: Option<(&AdamState<T>, &AdamConfig)>) -> Self {
        let to_named = |name: String, t: &Tensor<T>| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.to_f32_lossy()).collect(),
        };
        let names = net.param_names();
        let mut tensors: Vec<NamedTensor> = names.iter().cloned().zip(net.params()).map(|(n, t)| to_named(n, t)).collect();
        for (i, layer) in net.layers().iter().enumerate() {
            for (name, buf) in buffer_names(i).into_iter().zip(layer.buffers()) {
                tensors.push(to_named(name, buf));
            }
        }
        let optimizer = adam.map(|(state, cfg)| {
            for ((name, m), v) in names.iter().zip(&state.m).zip(&state.v) {
                tensors.push(to_named(format!("adam.m.{name}"), m));
                tensors.push(to_named(format!("adam.v.{name}"), v));
            }
            OptimizerMeta { step: state.step, config: cfg.clone() }
        });
        Self { spec: net.spec().clone(), tensors, optimizer, rng: None, meta: serde_json::Value::Null }
    }

    fn tensor(&self, name: &str) -> Result<&NamedTensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::Tensor { name: name.into(), detail: "missing".into() })
    }

    fn load_tensor<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self.tensor(name)?;
        if t.shape != shape {
            return Err(CheckpointError::Tensor { name: name.into(), detail: format!("shape {:?}, expected {shape:?}", t.shape) }.into());
        }
        Tensor::from_vec(t.shape.clone(), t.data.iter().map(|&v| T::from(v).unwrap_or_else(T::nan)).collect())
    }

    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        self.spec.validate()?;
        let mut layers = Vec::with_capacity(self.spec.layers.len());
        for (i, spec) in self.spec.layers.iter().enumerate() {
            let shapes = spec.param_shapes();
            let params = spec
                .param_names()
                .iter()
                .zip(&shapes)
                .map(|(n, s)| self.load_tensor(&format!("layer{i}.{n}"), s))
                .collect::<Result<Vec<_>>>()?;
            let buffers = if matches!(spec, super::LayerSpec::BatchNorm { .. }) {
                buffer_names(i)
                    .iter()
                    .zip(&shapes)
                    .map(|(n, s)| self.load_tensor(n, s))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            layers.push(Layer::from_parts(spec.clone(), params, buffers)?);
        }
        Network::from_layers(self.spec.clone(), layers)
    }

    pub fn to_adam<T: Scalar>(&self, net: &Network<T>) -> Result<Option<(AdamState<T>, AdamConfig)>> {
        let Some(opt) = &self.optimizer else { return Ok(None) };
        let mut state = AdamState::new(&net.params());
        for (i, (name, p)) in net.param_names().iter().zip(net.params()).enumerate() {
            state.m[i] = self.load_tensor(&format!("adam.m.{name}"), p.shape())?;
            state.v[i] = self.load_tensor(&format!("adam.v.{name}"), p.shape())?;
        }
        state.step = opt.step;
        Ok(Some((state, opt.config.clone())))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(CheckpointError::Tensor { name: t.name.clone(), detail: "data does not match shape".into() }.into());
            }
            entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset });
            offset += t.data.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            spec: self.spec.clone(),
            tensors: entries,
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut payload = Vec::with_capacity(offset * 4);
        for t in &self.tensors {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(28 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated("missing magic".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let take = |range: std::ops::Range<usize>, what: &str| {
            bytes.get(range).ok_or_else(|| CheckpointError::Truncated(format!("missing {what}")))
        };
        let version = u32::from_le_bytes(take(8..12, "version")?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version, supported: FORMAT_VERSION });
        }
        let hlen = u64::from_le_bytes(take(12..20, "header length")?.try_into().expect("8 bytes")) as usize;
        let hend = 20usize.checked_add(hlen).ok_or_else(|| CheckpointError::Header("header length overflow".into()))?;
        let header: Header =
            serde_json::from_slice(take(20..hend, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.format_version != version {
            return Err(CheckpointError::Header("header version disagrees with preamble".into()));
        }
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let pend = hend + total * 4;
        let payload = take(hend..pend, "payload")?;
        let stored = u64::from_le_bytes(take(pend..pend + 8, "checksum")?.try_into().expect("8 bytes"));
        if bytes.len() != pend + 8 {
            return Err(CheckpointError::Header(format!("{} trailing bytes", bytes.len() - pend - 8)));
        }
        let computed = fnv1a(payload);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset * 4;
            let chunk = payload
                .get(start..start + n * 4)
                .ok_or_else(|| CheckpointError::Tensor { name: e.name.clone(), detail: "offset out of range".into() })?;
            let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            tensors.push(NamedTensor { name: e.name, shape: e.shape, data });
        }
        Ok(Self { spec: header.spec, tensors, optimizer: header.optimizer, rng: header.rng, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::super::LayerSpec;
    use super::*;

    fn net() -> Network<f32> {
        let spec = NetworkSpec {
            input_channels: 3,
            layers: vec![
                LayerSpec::conv3x3(3, 4, 2),
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::FullyConnected { in_features: 4, out_features: 3 },
            ],
        };
        Network::init(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let n = net();
        let adam = AdamState::new(&n.params());
        let mut ck = Checkpoint::from_network(&n, Some((&adam, &AdamConfig::default())));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        ck.rng = Some(RngState::capture(&rng));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.to_network::<f32>().unwrap(), n);
        let mut r2 = back.rng.unwrap().restore().unwrap();
        assert_eq!(r2.random::<u64>(), rng.random::<u64>());
        assert!(back.optimizer.is_some());
    }

    #[test]
    fn corrupted_payload_checksum() {
        let mut bytes = Checkpoint::from_network(&net(), None).to_bytes().unwrap();
        let i = bytes.len() - 12;
        bytes[i] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = Checkpoint::from_network(&net(), None).to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.code(), "version");
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = Checkpoint::from_network(&net(), None).to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().code(), "truncated");
        assert_eq!(Checkpoint::from_bytes(&bytes[..30]).unwrap_err().code(), "truncated");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bad).unwrap_err().code(), "bad_magic");
    }
}
