//! Named-tensor checkpoint archive.
//!
//! Layout: the 8 ASCII bytes `SBPRUNE1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor as contiguous little-endian `f32`
//! values in header order. Header offsets are relative to the payload start.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::encoder::{
    layer_param_name, EncoderConfig, EncoderModel, LayerParams, NUM_LAYER_PARTS, POSITION_EMBEDDING, TOKEN_EMBEDDING,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SBPRUNE1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub tensors: Vec<TensorEntry>,
}

/// A model together with the vocabulary it was trained with, when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel<f32>,
    pub vocab: Option<Vocab>,
}

pub fn checkpoint_bytes(model: &EncoderModel<f32>, vocab: Option<&Vocab>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, t) in model.params() {
        let length = (t.len() * 4) as u64;
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab: vocab.map(|v| v.tokens().to_vec()),
        tensors,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in model.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

fn expected_names(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![
        (TOKEN_EMBEDDING.to_string(), vec![cfg.vocab_size, cfg.hidden_dim]),
        (POSITION_EMBEDDING.to_string(), vec![cfg.max_seq_len, cfg.hidden_dim]),
    ];
    let shapes = LayerParams::<f32>::shapes(cfg);
    for i in 0..cfg.num_layers {
        for (part, shape) in LayerParams::<f32>::PARTS.iter().zip(&shapes) {
            out.push((layer_param_name(i, part), shape.clone()));
        }
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing SBPRUNE1 magic".into()));
    }
    if bytes.len() < 16 {
        return Err(corrupt("truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| corrupt("header extends past end of file"))? as usize;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header
        .config
        .validate()
        .map_err(|e| corrupt(format!("header config: {e}")))?;

    let mut seen = HashSet::new();
    for entry in &header.tensors {
        if !seen.insert(entry.name.as_str()) {
            return Err(corrupt(format!("duplicate tensor name {}", entry.name)));
        }
    }
    let expected = expected_names(&header.config);
    if expected.len() != header.tensors.len() {
        return Err(corrupt(format!(
            "header lists {} tensors, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }

    let payload = &bytes[header_end..];
    let mut cursor = 0u64;
    let mut tensors = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name {
            return Err(corrupt(format!("expected tensor {name}, found {}", entry.name)));
        }
        if &entry.shape != shape {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, config implies {shape:?}",
                entry.shape
            )));
        }
        let n: usize = shape.iter().product();
        if entry.length != (n * 4) as u64 {
            return Err(corrupt(format!(
                "tensor {name} declares {} bytes, shape needs {}",
                entry.length,
                n * 4
            )));
        }
        if entry.offset != cursor {
            return Err(corrupt(format!("tensor {name} is not contiguous")));
        }
        let end = cursor + entry.length;
        if end > payload.len() as u64 {
            return Err(corrupt(format!("tensor region of {name} is truncated")));
        }
        let data: Vec<f32> = payload[cursor as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("tensor {name} holds non-finite values")));
        }
        tensors.push(Tensor::new(shape.clone(), data)?.with_grad());
        cursor = end;
    }
    if cursor != payload.len() as u64 {
        return Err(corrupt(format!(
            "{} trailing bytes after the last tensor",
            payload.len() as u64 - cursor
        )));
    }

    let mut it = tensors.into_iter();
    let token_embedding = it.next().expect("counted");
    let position_embedding = it.next().expect("counted");
    let mut layers = Vec::with_capacity(header.config.num_layers);
    for _ in 0..header.config.num_layers {
        let parts: [Tensor<f32>; NUM_LAYER_PARTS] = std::array::from_fn(|_| it.next().expect("counted"));
        layers.push(LayerParams::from_parts(parts));
    }
    let vocab = header
        .vocab
        .map(Vocab::from_tokens)
        .transpose()
        .map_err(|e| corrupt(format!("header vocab: {e}")))?;
    if let Some(v) = &vocab {
        if v.len() > header.config.vocab_size {
            return Err(corrupt("vocabulary larger than the embedding table"));
        }
    }
    Ok(Checkpoint {
        model: EncoderModel {
            config: header.config,
            token_embedding,
            position_embedding,
            layers,
        },
        vocab,
    })
}

/// Writes atomically (temp file, then rename).
pub fn save_checkpoint(model: &EncoderModel<f32>, vocab: Option<&Vocab>, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &checkpoint_bytes(model, vocab))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderModel<f32>> {
    read_checkpoint(path).map(|c| c.model)
}
