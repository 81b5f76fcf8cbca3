//! Binary checkpoints.
//!
//! Layout: the magic bytes `RVTLCKPT`, a little-endian `u32` version, a
//! `u64` header length, the JSON header, every parameter as little-endian
//! `f64` in header order, and a trailing FNV-1a 64 checksum over all
//! preceding bytes.

use std::hash::Hasher;
use std::path::Path;

use rovtl_autograd::ParamStore;
use serde::{Deserialize, Serialize};

use crate::encoders::TabularVocabulary;
use crate::error::{CoreError, Result};
use crate::finetune::{MultimodalModel, TaskSpec};
use crate::fusion::FusionConfig;
use crate::pretrain::{EncoderConfig, PretrainModel};
use crate::tabular::AttributeSchema;

pub const MAGIC: &[u8; 8] = b"RVTLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    group: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelBlock {
    Pretrain,
    Multimodal { fusion: FusionConfig, task: TaskSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelBlock,
    encoder: EncoderConfig,
    vocabulary: TabularVocabulary,
    schema: String,
    schema_fingerprint: String,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Pretrain(PretrainModel),
    Multimodal(MultimodalModel),
}

/// How the stored schema is checked on load.
#[derive(Debug, Clone, Copy)]
pub enum SchemaCheck<'a> {
    /// Fingerprints must match.
    Strict(&'a AttributeSchema),
    /// Any schema is accepted; unseen columns fall back to their hashed
    /// name embeddings and the new levels are registered.
    Transfer(&'a AttributeSchema),
    None,
}

/// Loaded model plus the schema it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub schema: AttributeSchema,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn encode(header: &Header, store: &ParamStore) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(24 + json.len() + store.numel() * 8 + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for entry in &header.params {
        let id = store.find(&entry.name).expect("header built from store");
        for v in store.value(id).iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn entries(store: &ParamStore) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(_, p)| ParamEntry {
            name: p.name.clone(),
            group: p.group.clone(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        })
        .collect()
}

pub fn pretrain_to_bytes(model: &PretrainModel, schema: &AttributeSchema) -> Result<Vec<u8>> {
    let header = Header {
        model: ModelBlock::Pretrain,
        encoder: model.config.clone(),
        vocabulary: model.tabular.vocab.clone(),
        schema: schema.to_sidecar(),
        schema_fingerprint: schema.fingerprint(),
        params: entries(&model.store),
    };
    encode(&header, &model.store)
}

pub fn multimodal_to_bytes(model: &MultimodalModel, schema: &AttributeSchema) -> Result<Vec<u8>> {
    let header = Header {
        model: ModelBlock::Multimodal {
            fusion: model.fusion.config.clone(),
            task: model.task.clone(),
        },
        encoder: model.encoder_config.clone(),
        vocabulary: model.tabular.vocab.clone(),
        schema: schema.to_sidecar(),
        schema_fingerprint: schema.fingerprint(),
        params: entries(&model.store),
    };
    encode(&header, &model.store)
}

pub fn to_bytes(checkpoint: &Checkpoint, schema: &AttributeSchema) -> Result<Vec<u8>> {
    match checkpoint {
        Checkpoint::Pretrain(m) => pretrain_to_bytes(m, schema),
        Checkpoint::Multimodal(m) => multimodal_to_bytes(m, schema),
    }
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| CoreError::Corrupt("truncated".into()))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn fill(store: &mut ParamStore, params: &[ParamEntry], payload: &[u8]) -> Result<()> {
    if store.len() != params.len() {
        return Err(CoreError::Corrupt(format!(
            "{} stored tensors for a model with {}",
            params.len(),
            store.len()
        )));
    }
    let mut pos = 0;
    for entry in params {
        let id = store
            .find(&entry.name)
            .ok_or_else(|| CoreError::Corrupt(format!("unknown parameter {}", entry.name)))?;
        let p = store.get(id);
        if p.group != entry.group || p.value.dim() != (entry.rows, entry.cols) {
            return Err(CoreError::Corrupt(format!("parameter {} does not match the config", entry.name)));
        }
        let value = store.value_mut(id);
        for v in value.iter_mut() {
            let raw = take(payload, &mut pos, 8)?;
            *v = f64::from_le_bytes(raw.try_into().expect("8 bytes"));
        }
    }
    if pos != payload.len() {
        return Err(CoreError::Corrupt("trailing parameter bytes".into()));
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8], check: SchemaCheck<'_>) -> Result<Loaded> {
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(CoreError::Corrupt("not a checkpoint".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let mut pos = 8;
    let version = u32::from_le_bytes(take(body, &mut pos, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CoreError::Version(version));
    }
    if checksum(body) != stored {
        return Err(CoreError::Corrupt("checksum mismatch".into()));
    }
    let len = u64::from_le_bytes(take(body, &mut pos, 8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| CoreError::Corrupt("header length".into()))?;
    let header: Header = serde_json::from_slice(take(body, &mut pos, len)?)?;
    let payload = &body[pos..];
    let schema = AttributeSchema::from_sidecar(&header.schema)?;
    let target = match check {
        SchemaCheck::Strict(s) => {
            if s.fingerprint() != header.schema_fingerprint {
                return Err(CoreError::SchemaMismatch {
                    expected: header.schema_fingerprint,
                    found: s.fingerprint(),
                });
            }
            None
        }
        SchemaCheck::Transfer(s) => Some(s),
        SchemaCheck::None => None,
    };
    let mut vocab = header.vocabulary.clone();
    if let Some(s) = target {
        vocab.register_schema(s);
    }
    let checkpoint = match header.model {
        ModelBlock::Pretrain => {
            let mut m = PretrainModel::new(header.encoder, 0)?;
            fill(&mut m.store, &header.params, payload)?;
            m.tabular.vocab = vocab;
            Checkpoint::Pretrain(m)
        }
        ModelBlock::Multimodal { fusion, task } => {
            let mut m = MultimodalModel::new(header.encoder, fusion, task, 0)?;
            fill(&mut m.store, &header.params, payload)?;
            m.tabular.vocab = vocab;
            Checkpoint::Multimodal(m)
        }
    };
    Ok(Loaded { checkpoint, schema })
}

pub fn save(path: &Path, checkpoint: &Checkpoint, schema: &AttributeSchema) -> Result<()> {
    std::fs::write(path, to_bytes(checkpoint, schema)?)?;
    Ok(())
}

pub fn load(path: &Path, check: SchemaCheck<'_>) -> Result<Loaded> {
    from_bytes(&std::fs::read(path)?, check)
}
