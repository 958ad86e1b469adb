//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parser};
use crate::tensor::Tensor;
use crate::vocab::Vocab;

pub const FORMAT: &str = "arcforge-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SavedParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    params: Vec<SavedParam>,
}

pub fn to_json(parser: &Parser) -> Result<String> {
    let mut params = Vec::with_capacity(parser.store.len());
    for (_, p) in parser.store.iter() {
        if let Some(v) = p.value.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter '{}' holds {v}", p.name)));
        }
        params.push(SavedParam {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
        });
    }
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: parser.config.clone(),
        vocab: parser.vocab.clone(),
        params,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(text: &str) -> Result<Parser> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("not a checkpoint (format '{}')", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    let params = file
        .params
        .into_iter()
        .map(|p| Ok((p.name, Tensor::new(p.shape, p.data)?)))
        .collect::<Result<Vec<_>>>()?;
    Parser::with_params(file.config, file.vocab, params)
}

pub fn save(parser: &Parser, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(parser)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Parser> {
    from_json(&std::fs::read_to_string(path)?)
}
