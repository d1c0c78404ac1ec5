//! Versioned model checkpoints: a single JSON document holding the
//! model configuration, the vocabulary's ordered token list, and a flat
//! list of named parameter tensors. Values round-trip bit-exactly and
//! identical models serialize to identical bytes.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, Model, ModelConfig, ModelVariant};
use crate::tensor::Tensor;

const FORMAT: &str = "aflstm-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    majority_class: Option<usize>,
    params: Vec<ParamRecord>,
}

/// Serializes the model and vocabulary to checkpoint bytes (JSON, one
/// trailing newline). Deterministic: equal models give equal bytes.
pub fn model_to_bytes(model: &Model, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let params = model
        .params()
        .iter()
        .map(|p| ParamRecord {
            name: p.name().to_string(),
            shape: p.value().shape().to_vec(),
            trainable: p.trainable(),
            data: p.value().data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        config: model.config().clone(),
        vocab: vocab.tokens().to_vec(),
        majority_class: model.majority_class(),
        params,
    };
    let mut bytes = serde_json::to_vec(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes bytes via a temporary file in the same directory followed by a
/// rename, so a crash never leaves a partial artifact at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    use std::io::Write;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_model(model: &Model, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model, vocab)?;
    write_atomic(path, &bytes)
}

/// Rebuilds a model and vocabulary from checkpoint bytes. Every stored
/// parameter must match the freshly constructed layout in name and
/// shape; values are restored bit-exactly.
pub fn model_from_bytes(bytes: &[u8]) -> Result<(Model, Vocabulary)> {
    let file: CheckpointFile = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {VERSION})",
            file.version
        )));
    }
    let vocab = Vocabulary::from_tokens(file.vocab)
        .map_err(|e| Error::Checkpoint(format!("bad vocabulary: {e}")))?;

    let pretrained = if file.config.variant == ModelVariant::Majority {
        None
    } else {
        let first = file.params.first().ok_or_else(|| {
            Error::Checkpoint("checkpoint stores no parameters".into())
        })?;
        if first.name != "embedding" {
            return Err(Error::Checkpoint(format!(
                "first parameter is {:?}, expected the embedding table",
                first.name
            )));
        }
        let values = Tensor::from_vec(first.shape.clone(), first.data.clone())
            .map_err(|e| Error::Checkpoint(format!("embedding tensor: {e}")))?;
        Some(EmbeddingTable { values, trainable: first.trainable })
    };

    let mut model = Model::new(file.config, vocab.len(), pretrained)?;
    if let Some(class) = file.majority_class {
        model.set_majority_class(class)?;
    }

    let expected = model.params().len();
    if file.params.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model layout has {expected}",
            file.params.len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for (rec, id) in file.params.into_iter().zip(ids) {
        let param = model.params_mut().get_mut(id);
        if rec.name != param.name() {
            return Err(Error::Checkpoint(format!(
                "parameter {:?} does not match layout entry {:?}",
                rec.name,
                param.name()
            )));
        }
        if rec.shape != param.value().shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {:?} has shape {:?}, layout expects {:?}",
                rec.name,
                rec.shape,
                param.value().shape()
            )));
        }
        let restored = Tensor::from_vec(rec.shape, rec.data)
            .map_err(|e| Error::Checkpoint(format!("tensor {:?}: {e}", rec.name)))?;
        *param.value_mut() = restored;
    }
    Ok((model, vocab))
}

pub fn load_model(path: &Path) -> Result<(Model, Vocabulary)> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}
