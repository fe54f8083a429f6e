//! The `ANTM` model file.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ANTM"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     metadata length L, u64 little-endian
//! 16      L     metadata, UTF-8 JSON (see `FileMetadata`)
//! 16+L    ...   weight arrays as little-endian f32, in manifest order
//! ```
//!
//! Weights are held as `f64` in memory and rounded to `f32` on save.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::CompressionConfig;
use crate::error::ConfigError;
use crate::linalg::Scalar;
use crate::operators::{factor_layout, CompressedLinear};

use super::cell::{LstmCell, GATE_ORDER};
use super::model::{LstmModel, ModelMetadata};

pub const MAGIC: [u8; 4] = *b"ANTM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected \"ANTM\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("{0} unexpected trailing bytes after the last weight array")]
    TrailingBytes(u64),
    #[error("metadata is not valid UTF-8 JSON: {0}")]
    Metadata(String),
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error("invalid model: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetadata {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: CompressionConfig,
    pub w_hidden: CompressionConfig,
}

/// JSON metadata block of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetadata {
    pub name: String,
    pub seed: u64,
    pub storage: String,
    pub gate_order: Vec<String>,
    pub layers: Vec<LayerMetadata>,
    pub arrays: Vec<ArrayEntry>,
}

/// Manifest entries of one operator; block-diagonal arrays keep their
/// `[groups, rows, cols]` shape.
fn operator_arrays(prefix: &str, cfg: &CompressionConfig) -> Result<Vec<ArrayEntry>, ConfigError> {
    Ok(factor_layout(cfg)?
        .into_iter()
        .map(|l| ArrayEntry {
            name: format!("{prefix}.{}", l.name),
            shape: l.shape,
        })
        .collect())
}

fn expected_arrays(layers: &[LayerMetadata]) -> Result<Vec<ArrayEntry>, ConfigError> {
    let mut out = Vec::new();
    for (k, l) in layers.iter().enumerate() {
        out.extend(operator_arrays(&format!("layers.{k}.w_input"), &l.w_input)?);
        out.extend(operator_arrays(&format!("layers.{k}.w_hidden"), &l.w_hidden)?);
        out.push(ArrayEntry {
            name: format!("layers.{k}.bias"),
            shape: vec![4 * l.hidden_dim],
        });
    }
    Ok(out)
}

impl FileMetadata {
    pub fn for_model<T: Scalar>(model: &LstmModel<T>) -> Result<Self, ConfigError> {
        let layers: Vec<LayerMetadata> = model
            .layers()
            .iter()
            .map(|c| LayerMetadata {
                input_dim: c.input_dim(),
                hidden_dim: c.hidden_dim(),
                w_input: c.w_input.config(),
                w_hidden: c.w_hidden.config(),
            })
            .collect();
        Ok(FileMetadata {
            name: model.metadata.name.clone(),
            seed: model.metadata.seed,
            storage: "f32le".into(),
            gate_order: GATE_ORDER.iter().map(|s| s.to_string()).collect(),
            arrays: expected_arrays(&layers)?,
            layers,
        })
    }

    pub fn payload_len(&self) -> u64 {
        self.arrays
            .iter()
            .map(|a| a.shape.iter().product::<usize>() as u64 * 4)
            .sum()
    }
}

/// Serializes a model to bytes. Identical models always produce identical
/// bytes.
pub fn encode_model<T: Scalar>(model: &LstmModel<T>) -> Result<Vec<u8>, FormatError> {
    let meta = FileMetadata::for_model(model)?;
    let json = serde_json::to_vec(&meta).map_err(|e| FormatError::Metadata(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + meta.payload_len() as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut push = |values: &[T]| {
        for v in values {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    };
    for cell in model.layers() {
        for f in cell.w_input.factors() {
            push(f);
        }
        for f in cell.w_hidden.factors() {
            push(f);
        }
        push(&cell.bias);
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: u64, section: &'static str) -> Result<&'a [u8], FormatError> {
    let available = bytes.len().saturating_sub(at) as u64;
    if available < len {
        return Err(FormatError::Truncated {
            section,
            expected: len,
            found: available,
        });
    }
    Ok(&bytes[at..at + len as usize])
}

/// Reads only the header and metadata block.
pub fn decode_metadata(bytes: &[u8]) -> Result<(FileMetadata, usize), FormatError> {
    let header = take(bytes, 0, HEADER_LEN as u64, "header")?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version });
    }
    let meta_len = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let json = take(bytes, HEADER_LEN, meta_len, "metadata")?;
    let meta: FileMetadata =
        serde_json::from_slice(json).map_err(|e| FormatError::Metadata(e.to_string()))?;
    Ok((meta, HEADER_LEN + meta_len as usize))
}

pub fn decode_model(bytes: &[u8]) -> Result<LstmModel, FormatError> {
    let (meta, offset) = decode_metadata(bytes)?;
    if meta.gate_order != GATE_ORDER {
        return Err(FormatError::Manifest(format!(
            "gate order {:?} is not {:?}",
            meta.gate_order, GATE_ORDER
        )));
    }
    if meta.layers.is_empty() {
        return Err(FormatError::Manifest("no layers".into()));
    }
    for (k, l) in meta.layers.iter().enumerate() {
        let (wi, wh) = (&l.w_input, &l.w_hidden);
        if wi.m != 4 * l.hidden_dim || wi.n != l.input_dim || wh.m != 4 * l.hidden_dim || wh.n != l.hidden_dim
        {
            return Err(FormatError::Manifest(format!(
                "layer {k}: operator dims disagree with input {} / hidden {}",
                l.input_dim, l.hidden_dim
            )));
        }
    }
    let expected = expected_arrays(&meta.layers)?;
    if expected != meta.arrays {
        return Err(FormatError::Manifest(
            "array list does not match the layer operators".into(),
        ));
    }
    let payload_len = meta.payload_len();
    let payload = take(bytes, offset, payload_len, "weights")?;
    let trailing = (bytes.len() - offset) as u64 - payload_len;
    if trailing != 0 {
        return Err(FormatError::TrailingBytes(trailing));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut read = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let mut layers = Vec::with_capacity(meta.layers.len());
    for l in &meta.layers {
        let mut op = |cfg: &CompressionConfig| -> Result<CompressedLinear, ConfigError> {
            let factors = factor_layout(cfg)?.iter().map(|f| read(f.len())).collect();
            CompressedLinear::from_factors(cfg, factors)
        };
        let w_input = op(&l.w_input)?;
        let w_hidden = op(&l.w_hidden)?;
        let bias = read(4 * l.hidden_dim);
        layers.push(LstmCell::new(w_input, w_hidden, bias)?);
    }
    Ok(LstmModel::new(
        layers,
        ModelMetadata {
            name: meta.name,
            seed: meta.seed,
        },
    )?)
}

pub fn save_model<T: Scalar>(model: &LstmModel<T>, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel, FormatError> {
    decode_model(&fs::read(path)?)
}

/// Bytes of weight storage at 32 bits per parameter.
pub fn model_bytes<T: Scalar>(model: &LstmModel<T>) -> u64 {
    4 * model.param_count() as u64
}
