//! Model and explainer files: a JSON metadata block followed by an embedded
//! parameter checkpoint.
//!
//! ```text
//! magic      8 bytes  "CHTXMODL" or "CHTXEXPL"
//! version    u32      1
//! meta_len   u32
//! meta       JSON, meta_len bytes
//! params     a complete checkpoint (see `checkpoint`), CRC included
//! ```

use std::fs;
use std::path::Path;

use chemtext_core::codec::Vocabulary;
use chemtext_core::explain::{ExplainerConfig, ExplainerNet};
use chemtext_core::model::{ArchClass, HyperParams, Model, TaskSpec};
use chemtext_core::nn::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, open};
use crate::error::{Error, FormatError, Result};
use crate::vocab_file;

pub const MODEL_MAGIC: &[u8; 8] = b"CHTXMODL";
pub const EXPLAINER_MAGIC: &[u8; 8] = b"CHTXEXPL";
pub const VERSION: u32 = 1;

/// Hex SHA-256 of the vocabulary's text rendering.
pub fn vocab_hash(vocab: &Vocabulary) -> String {
    Sha256::digest(vocab_file::render(vocab).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: ArchClass,
    pub hyper_params: HyperParams,
    pub task: TaskSpec,
    #[serde(default)]
    pub task_names: Vec<String>,
    pub vocabulary: Vocabulary,
    pub vocabulary_sha256: String,
    pub precision: u32,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerMeta {
    pub config: ExplainerConfig,
    pub em_size: usize,
    pub running_mean: f64,
    pub running_var: f64,
    /// Fingerprint of the base model the explainer was trained against.
    pub base_fingerprint: u64,
    pub precision: u32,
}

fn pack(magic: &[u8; 8], meta: &impl Serialize, params: Vec<u8>) -> Vec<u8> {
    let meta = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + meta.len() + params.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&params);
    out
}

fn unpack<'a, M: Deserialize<'a>>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    name: &'static str,
) -> Result<(M, &'a [u8]), FormatError> {
    let mut r = open(bytes, magic, name, VERSION)?;
    let len = r.u32("metadata length")? as usize;
    let meta = r.take(len, "metadata")?;
    let meta = serde_json::from_slice(meta).map_err(|e| FormatError::Corrupt(format!("metadata: {e}")))?;
    Ok((meta, r.rest()))
}

pub fn encode_model<T: Real>(model: &Model<T>, task_names: &[String]) -> Vec<u8> {
    let meta = ModelMeta {
        arch: model.arch(),
        hyper_params: *model.hyper_params(),
        task: *model.task(),
        task_names: task_names.to_vec(),
        vocabulary: model.vocab().clone(),
        vocabulary_sha256: vocab_hash(model.vocab()),
        precision: T::BITS,
        param_count: model.param_count(),
    };
    pack(MODEL_MAGIC, &meta, checkpoint::encode(model.params()))
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<(Model<T>, ModelMeta), FormatError> {
    let (meta, rest): (ModelMeta, _) = unpack(bytes, MODEL_MAGIC, "model")?;
    if vocab_hash(&meta.vocabulary) != meta.vocabulary_sha256 {
        return Err(FormatError::Corrupt("vocabulary hash does not match the stored vocabulary".into()));
    }
    let params = checkpoint::decode::<T>(rest)?;
    let model = Model::from_parts(meta.arch, meta.hyper_params, meta.task, meta.vocabulary.clone(), params)
        .map_err(|e| FormatError::Corrupt(e.to_string()))?;
    Ok((model, meta))
}

pub fn save_model<T: Real>(model: &Model<T>, task_names: &[String], path: &Path) -> Result<()> {
    fs::write(path, encode_model(model, task_names)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Real>(path: &Path) -> Result<(Model<T>, ModelMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| Error::format(path, e))
}

pub fn encode_explainer<T: Real>(net: &ExplainerNet<T>, base_fingerprint: u64) -> Vec<u8> {
    let (mean, var) = net.running_stats();
    let meta = ExplainerMeta {
        config: net.config().clone(),
        em_size: net.em_size(),
        running_mean: mean.as_f64(),
        running_var: var.as_f64(),
        base_fingerprint,
        precision: T::BITS,
    };
    pack(EXPLAINER_MAGIC, &meta, checkpoint::encode(net.params()))
}

pub fn decode_explainer<T: Real>(bytes: &[u8]) -> Result<(ExplainerNet<T>, ExplainerMeta), FormatError> {
    let (meta, rest): (ExplainerMeta, _) = unpack(bytes, EXPLAINER_MAGIC, "explainer")?;
    let params = checkpoint::decode::<T>(rest)?;
    let net = ExplainerNet::from_parts(
        meta.config.clone(),
        meta.em_size,
        params,
        T::from_f64(meta.running_mean),
        T::from_f64(meta.running_var),
    )
    .map_err(|e| FormatError::Corrupt(e.to_string()))?;
    Ok((net, meta))
}

pub fn save_explainer<T: Real>(net: &ExplainerNet<T>, base_fingerprint: u64, path: &Path) -> Result<()> {
    fs::write(path, encode_explainer(net, base_fingerprint)).map_err(|e| Error::io(path, e))
}

pub fn load_explainer<T: Real>(path: &Path) -> Result<(ExplainerNet<T>, ExplainerMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_explainer(&bytes).map_err(|e| Error::format(path, e))
}
